use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numcore::tensor::DenseTensor;
use crate::scalar::Scalar;

/// Signal level at `t = 1`.
const ALPHA_FIRST: f64 = 0.9999;
/// Signal level at `t = T`.
const ALPHA_LAST: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `alpha_t = cos(phi_t)` with the angle linear in `t`.
    #[default]
    Cosine,
    /// `alpha_t^2` linear in `t`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(default)]
    pub kind: ScheduleKind,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            kind: ScheduleKind::Cosine,
        }
    }
}

/// Variance-preserving forward process `x_t = alpha_t x_0 + sigma_t eps`,
/// tabulated for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<S> {
    spec: ScheduleSpec,
    alpha: Vec<S>,
    sigma: Vec<S>,
}

impl<S: Scalar> NoiseSchedule<S> {
    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.steps
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.spec.steps {
            return Err(LabError::argument(format!(
                "timestep {t} outside 1..={}",
                self.spec.steps
            )));
        }
        Ok(t - 1)
    }

    pub fn alpha(&self, t: usize) -> Result<S> {
        Ok(self.alpha[self.check_t(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<S> {
        Ok(self.sigma[self.check_t(t)?])
    }

    /// `(alpha_t, sigma_t)`; panics when `t` is out of range.
    pub(crate) fn coeffs(&self, t: usize) -> (S, S) {
        (self.alpha[t - 1], self.sigma[t - 1])
    }

    pub fn alphas(&self) -> &[S] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[S] {
        &self.sigma
    }
}

pub fn make_schedule<S: Scalar>(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule<S>> {
    if steps < 2 {
        return Err(LabError::argument(format!(
            "schedule needs at least 2 steps, got {steps}"
        )));
    }
    let last = (steps - 1) as f64;
    let mut alpha = Vec::with_capacity(steps);
    let mut sigma = Vec::with_capacity(steps);
    match kind {
        ScheduleKind::Cosine => {
            let (phi0, phi1) = (ALPHA_FIRST.acos(), ALPHA_LAST.acos());
            for i in 0..steps {
                let phi = phi0 + (phi1 - phi0) * i as f64 / last;
                alpha.push(S::of(phi.cos()));
                sigma.push(S::of(phi.sin()));
            }
        }
        ScheduleKind::Linear => {
            let (a0, a1) = (ALPHA_FIRST * ALPHA_FIRST, ALPHA_LAST * ALPHA_LAST);
            for i in 0..steps {
                let abar = a0 + (a1 - a0) * i as f64 / last;
                alpha.push(S::of(abar.sqrt()));
                sigma.push(S::of((1.0 - abar).sqrt()));
            }
        }
    }
    // pin the endpoints exactly; cos(acos(a)) can drift by an ulp
    for (i, a) in [(0, ALPHA_FIRST), (steps - 1, ALPHA_LAST)] {
        alpha[i] = S::of(a);
        sigma[i] = S::of((1.0 - a * a).sqrt());
    }
    Ok(NoiseSchedule {
        spec: ScheduleSpec { steps, kind },
        alpha,
        sigma,
    })
}

impl ScheduleSpec {
    pub fn build<S: Scalar>(&self) -> Result<NoiseSchedule<S>> {
        make_schedule(self.steps, self.kind)
    }
}

pub fn add_noise<S: Scalar>(
    x0: &DenseTensor<S>,
    t: usize,
    eps: &DenseTensor<S>,
    sched: &NoiseSchedule<S>,
) -> Result<DenseTensor<S>> {
    let a = sched.alpha(t)?;
    let s = sched.sigma(t)?;
    x0.zip_map(eps, |x, e| a * x + s * e)
}

/// Clean-sample estimate `(x_t - sigma_t eps_hat) / alpha_t`.
pub fn predict_x0<S: Scalar>(
    x_t: &DenseTensor<S>,
    eps_hat: &DenseTensor<S>,
    t: usize,
    sched: &NoiseSchedule<S>,
) -> Result<DenseTensor<S>> {
    let a = sched.alpha(t)?;
    let s = sched.sigma(t)?;
    if a < S::of(1e-8) {
        return Err(LabError::Singularity(format!(
            "alpha_{t} = {a} is too small to invert"
        )));
    }
    x_t.zip_map(eps_hat, |x, e| (x - s * e) / a)
}
