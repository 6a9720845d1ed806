use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Per-class two-component Gaussian mixture on a circle.
///
/// The `2C` mode centres are evenly spaced; class `c` owns the preferred mode
/// at angle `2*pi*c/C` and the dispreferred mode half a slot further on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureLayout {
    pub num_classes: usize,
    pub radius: f64,
    pub mode_std: f64,
}

impl Default for MixtureLayout {
    fn default() -> Self {
        Self {
            num_classes: 3,
            radius: 2.0,
            mode_std: 0.15,
        }
    }
}

impl MixtureLayout {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || !(self.radius > 0.0) || !(self.mode_std > 0.0) {
            return Err(LabError::config(format!("invalid mixture layout {self:?}")));
        }
        Ok(())
    }

    fn point(&self, slot: usize) -> [f64; 2] {
        let angle = std::f64::consts::PI * slot as f64 / self.num_classes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }

    pub fn preferred_mode(&self, class: usize) -> [f64; 2] {
        self.point(2 * class)
    }

    pub fn dispreferred_mode(&self, class: usize) -> [f64; 2] {
        self.point(2 * class + 1)
    }

    /// Angular gap between a class's two modes.
    pub fn mode_gap_angle(&self) -> f64 {
        std::f64::consts::PI / self.num_classes as f64
    }

    /// Draws one sample of `class`; the flag is true for the preferred mode.
    pub fn sample(&self, class: usize, rng: &mut impl Rng) -> ([f64; 2], bool) {
        let preferred = rng.random_bool(0.5);
        let m = if preferred {
            self.preferred_mode(class)
        } else {
            self.dispreferred_mode(class)
        };
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        ([m[0] + self.mode_std * zx, m[1] + self.mode_std * zy], preferred)
    }

    /// True when `x` is closer to the preferred than the dispreferred mode of `class`.
    pub fn nearer_preferred(&self, class: usize, x: &[f64]) -> bool {
        dist2(x, &self.preferred_mode(class)) < dist2(x, &self.dispreferred_mode(class))
    }

    /// Distance from `x` to the nearest of `class`'s two modes.
    pub fn distance_to_class(&self, class: usize, x: &[f64]) -> f64 {
        dist2(x, &self.preferred_mode(class))
            .min(dist2(x, &self.dispreferred_mode(class)))
            .sqrt()
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
