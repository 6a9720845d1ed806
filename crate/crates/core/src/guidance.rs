//! Classifier-free guidance algebra.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{eps_predict, Condition, EpsModel};
use crate::error::{LabError, Result};
use crate::numcore::tensor::DenseTensor;
use crate::rng::SeedStream;
use crate::scalar::Scalar;

pub const DEFAULT_OMEGA: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub omega: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            omega: DEFAULT_OMEGA,
        }
    }
}

impl GuidanceConfig {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega.is_finite() && omega >= 0.0) {
            return Err(LabError::argument(format!(
                "guidance strength must be finite and non-negative, got {omega}"
            )));
        }
        Ok(Self { omega })
    }
}

/// In-place `(w + 1) * cond - w * neg`. Coordinates where both branches agree
/// pass through untouched, so identical branches cancel exactly.
pub(crate) fn combine_into<S: Scalar>(cond: &mut [S], neg: &[S], omega: S) {
    let w1 = omega + S::one();
    for (a, &b) in cond.iter_mut().zip(neg) {
        if *a != b {
            *a = w1 * *a - omega * b;
        }
    }
}

pub fn cfg_combine<S: Scalar>(
    eps_cond: &DenseTensor<S>,
    eps_neg: &DenseTensor<S>,
    omega: S,
) -> Result<DenseTensor<S>> {
    GuidanceConfig::new(omega.to_f64_lossy())?;
    let w1 = omega + S::one();
    eps_cond.zip_map(eps_neg, |a, b| if a == b { a } else { w1 * a - omega * b })
}

/// One guided noise prediction with the positive model on `c` and the
/// negative model on the null condition.
pub fn dual_weight_step<S: Scalar>(
    pos: &EpsModel<S>,
    neg: &EpsModel<S>,
    x_t: &DenseTensor<S>,
    t: usize,
    c: Condition,
    omega: S,
) -> Result<DenseTensor<S>> {
    let e_pos = eps_predict(pos, x_t, t, c)?;
    let e_neg = eps_predict(neg, x_t, t, Condition::Null)?;
    cfg_combine(&e_pos, &e_neg, omega)
}

/// Sample variance of `(w + 1) a - w b` for independent standard normals.
/// Under independence this is `2 w^2 + 2 w + 1`.
pub fn cfg_variance_probe(omega: f64, n: usize, seed: u64) -> Result<f64> {
    GuidanceConfig::new(omega)?;
    if n < 10_000 {
        return Err(LabError::argument(format!(
            "variance probe needs at least 10^4 draws, got {n}"
        )));
    }
    let mut rng = SeedStream::new(seed).rng("cfg_variance_probe", 0);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        let v = (omega + 1.0) * a - omega * b;
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    Ok(m2 / (n - 1) as f64)
}

pub fn independent_variance(omega: f64) -> f64 {
    2.0 * omega * omega + 2.0 * omega + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::EpsArch;
    use crate::diffusion::schedule::{ScheduleKind, ScheduleSpec};
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DenseTensor<f64> {
        DenseTensor::vector(x.to_vec()).unwrap()
    }

    #[test]
    fn direct_evaluation() {
        let out = cfg_combine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 7.5).unwrap();
        assert_eq!(out.data(), &[8.5, -7.5]);
    }

    #[test]
    fn zero_strength_is_identity() {
        let a = v(&[0.3, -1.7]);
        assert_eq!(cfg_combine(&a, &v(&[9.0, 4.0]), 0.0).unwrap(), a);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(cfg_combine(&v(&[1.0]), &v(&[1.0, 2.0]), 1.0).is_err());
        assert!(cfg_combine(&v(&[1.0]), &v(&[1.0]), -1.0).is_err());
        assert!(GuidanceConfig::new(f64::INFINITY).is_err());
        assert!(cfg_variance_probe(1.0, 100, 0).is_err());
    }

    #[test]
    fn variance_probe_small_cases() {
        for (w, want) in [(0.0, 1.0), (1.0, 5.0), (7.5, 128.5)] {
            let got = cfg_variance_probe(w, 100_000, 17).unwrap();
            assert!((got / want - 1.0).abs() < 0.05, "{w}: {got}");
            assert_eq!(independent_variance(w), want);
        }
    }

    #[test]
    fn dual_step_degenerates() {
        let sched = ScheduleSpec {
            steps: 50,
            kind: ScheduleKind::Cosine,
        };
        let mut rng = crate::rng::rng_from_seed(2);
        let pos = EpsModel::<f64>::init(EpsArch::default(), sched, &mut rng).unwrap();
        let neg = EpsModel::<f64>::init(EpsArch::default(), sched, &mut rng).unwrap();
        let x = v(&[0.4, -0.2]);
        let c = Condition::Class(1);
        let zero = dual_weight_step(&pos, &neg, &x, 7, c, 0.0).unwrap();
        assert_eq!(zero, eps_predict(&pos, &x, 7, c).unwrap());
        let same = dual_weight_step(&pos, &pos, &x, 7, c, 3.0).unwrap();
        let classical = cfg_combine(
            &eps_predict(&pos, &x, 7, c).unwrap(),
            &eps_predict(&pos, &x, 7, Condition::Null).unwrap(),
            3.0,
        )
        .unwrap();
        assert_eq!(same, classical);
    }

    proptest! {
        #[test]
        fn identical_branches_cancel(w in 0.0f64..20.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let e = v(&[a, b]);
            prop_assert_eq!(cfg_combine(&e, &e, w).unwrap(), e);
        }

        #[test]
        fn affine_in_conditional_branch(
            w in 0.0f64..20.0,
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            d in -5.0f64..5.0,
        ) {
            let base = cfg_combine(&v(&[a]), &v(&[b]), w).unwrap().data()[0];
            let moved = cfg_combine(&v(&[a + d]), &v(&[b]), w).unwrap().data()[0];
            let want = (w + 1.0) * d;
            let scale = 1.0 + (w + 1.0) * (a.abs() + d.abs()) + w * b.abs();
            // both sides rounded once per operand
            prop_assert!(((moved - base) - want).abs() <= 8.0 * f64::EPSILON * scale);
        }
    }
}
