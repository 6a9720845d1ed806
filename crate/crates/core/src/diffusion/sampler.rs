use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{Condition, EpsModel, SAMPLE_DIM};
use crate::error::{LabError, Result};
use crate::guidance::combine_into;
use crate::numcore::tensor::{check_finite, DenseTensor};
use crate::rng::{LabRng, SeedStream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Stochastic update with schedule-consistent fresh noise per step.
    Ancestral,
    /// Noise-free update re-noising the clean estimate with the predicted eps.
    #[default]
    Deterministic,
}

/// Inference-time settings shared by every guided sampling call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub omega: f64,
    pub steps: usize,
    #[serde(default)]
    pub mode: SamplerMode,
    /// Condition fed to the negative branch.
    #[serde(default = "null_condition")]
    pub neg_condition: Condition,
}

fn null_condition() -> Condition {
    Condition::Null
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            omega: 7.5,
            steps: 50,
            mode: SamplerMode::Deterministic,
            neg_condition: Condition::Null,
        }
    }
}

impl SamplerSpec {
    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(LabError::argument(format!(
                "omega must be finite and non-negative, got {}",
                self.omega
            )));
        }
        if self.steps == 0 {
            return Err(LabError::argument("sampler needs at least one step"));
        }
        Ok(())
    }
}

/// Descending, uniformly spaced timesteps from `T` to `1`.
pub fn timesteps(horizon: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > horizon {
        return Err(LabError::argument(format!(
            "steps must lie in 1..={horizon}, got {steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![horizon]);
    }
    let span = (horizon - 1) as f64;
    Ok((0..steps)
        .map(|i| (horizon as f64 - i as f64 * span / (steps - 1) as f64).round() as usize)
        .collect())
}

fn condition_code(c: Condition) -> u64 {
    match c {
        Condition::Class(k) => k as u64,
        Condition::Null => u64::MAX,
    }
}

/// Noise stream for one `(seed, condition)` sampling call. Two samplers given
/// the same seed and condition consume identical noise.
pub fn sample_rng(seed: u64, c: Condition) -> LabRng {
    SeedStream::new(seed).rng("reverse_sample", condition_code(c))
}

pub(crate) fn gaussian<S: Scalar>(rng: &mut impl Rng) -> [S; SAMPLE_DIM] {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    [S::of(a), S::of(b)]
}

/// Runs the reverse process from `x_T ~ N(0, I)` with a caller-supplied noise
/// predictor. Returns the final clean-sample estimate.
pub(crate) fn run_reverse<S: Scalar>(
    model: &EpsModel<S>,
    steps: usize,
    mode: SamplerMode,
    rng: &mut LabRng,
    mut eps_fn: impl FnMut(&[S], usize) -> Vec<S>,
) -> Result<Vec<S>> {
    let ts = timesteps(model.horizon(), steps)?;
    let sched = model.schedule();
    let mut x = gaussian::<S>(rng).to_vec();
    for (i, &t) in ts.iter().enumerate() {
        let eps = eps_fn(&x, t);
        check_finite("sampler eps", &eps)?;
        let (a, s) = sched.coeffs(t);
        let x0: Vec<S> = x.iter().zip(&eps).map(|(&xi, &e)| (xi - s * e) / a).collect();
        let Some(&t_next) = ts.get(i + 1) else {
            x = x0;
            break;
        };
        let (a2, s2) = sched.coeffs(t_next);
        x = match mode {
            SamplerMode::Deterministic => x0
                .iter()
                .zip(&eps)
                .map(|(&x0i, &e)| a2 * x0i + s2 * e)
                .collect(),
            SamplerMode::Ancestral => {
                let ratio = a / a2;
                let var = (s2 / s) * (s2 / s) * (S::one() - ratio * ratio);
                let noise_std = var.max(S::zero()).sqrt();
                let dir = (s2 * s2 - noise_std * noise_std).max(S::zero()).sqrt();
                let z = gaussian::<S>(rng);
                x0.iter()
                    .zip(&eps)
                    .zip(z)
                    .map(|((&x0i, &e), zi)| a2 * x0i + dir * e + noise_std * zi)
                    .collect()
            }
        };
        check_finite("sampler state", &x)?;
    }
    Ok(x)
}

/// Guided reverse sampling with separate positive and negative models:
/// `eps = (w + 1) eps_pos(x, c, t) - w eps_neg(x, c', t)`.
pub fn reverse_sample<S: Scalar>(
    pos: &EpsModel<S>,
    neg: &EpsModel<S>,
    c: Condition,
    spec: &SamplerSpec,
    seed: u64,
) -> Result<DenseTensor<S>> {
    spec.validate()?;
    if !pos.compatible(neg) {
        return Err(LabError::config(
            "positive and negative models differ in architecture or schedule",
        ));
    }
    pos.check_condition(c)?;
    neg.check_condition(spec.neg_condition)?;
    let mut rng = sample_rng(seed, c);
    let omega = S::of(spec.omega);
    let out = if spec.omega == 0.0 {
        run_reverse(pos, spec.steps, spec.mode, &mut rng, |x, t| pos.eps_raw(x, t, c))?
    } else {
        run_reverse(pos, spec.steps, spec.mode, &mut rng, |x, t| {
            let mut e = pos.eps_raw(x, t, c);
            let n = neg.eps_raw(x, t, spec.neg_condition);
            combine_into(&mut e, &n, omega);
            e
        })?
    };
    DenseTensor::vector(out)
}

/// Unguided conditional sampling from a single model.
pub fn sample_conditional<S: Scalar>(
    model: &EpsModel<S>,
    c: Condition,
    steps: usize,
    mode: SamplerMode,
    seed: u64,
) -> Result<DenseTensor<S>> {
    model.check_condition(c)?;
    let mut rng = sample_rng(seed, c);
    let out = run_reverse(model, steps, mode, &mut rng, |x, t| model.eps_raw(x, t, c))?;
    DenseTensor::vector(out)
}
