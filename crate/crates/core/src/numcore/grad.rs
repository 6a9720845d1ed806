use crate::error::{LabError, Result};
use crate::numcore::tensor::check_finite;
use crate::scalar::Scalar;
use crate::weightalg::ParamSet;

/// A scalar loss over a parameter vector with an analytic gradient.
pub trait Objective<S: Scalar> {
    fn value(&self, params: &ParamSet<S>) -> Result<S>;

    fn value_and_grad(&self, params: &ParamSet<S>) -> Result<(S, ParamSet<S>)>;
}

/// Gradient of `loss` at `params`, rejecting non-finite losses or gradients.
pub fn loss_gradient<S: Scalar, O: Objective<S> + ?Sized>(
    params: &ParamSet<S>,
    loss: &O,
) -> Result<ParamSet<S>> {
    checked_value_and_grad(params, loss).map(|(_, g)| g)
}

/// Like [`loss_gradient`] but also returns the loss value.
pub fn checked_value_and_grad<S: Scalar, O: Objective<S> + ?Sized>(
    params: &ParamSet<S>,
    loss: &O,
) -> Result<(S, ParamSet<S>)> {
    let (value, grad) = loss.value_and_grad(params)?;
    if !value.is_finite() {
        return Err(LabError::Numeric {
            context: "loss value".into(),
            value: value.to_f64_lossy(),
        });
    }
    if grad.len() != params.len() {
        return Err(LabError::Shape {
            context: "gradient",
            expected: vec![params.len()],
            actual: vec![grad.len()],
        });
    }
    check_finite("gradient", grad.values())?;
    Ok((value, grad))
}

/// Max over coordinates of `|analytic - central| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<S: Scalar, O: Objective<S> + ?Sized>(
    params: &ParamSet<S>,
    loss: &O,
    step: S,
) -> Result<S> {
    if !(step > S::zero()) {
        return Err(LabError::argument(format!("step must be positive, got {step}")));
    }
    let analytic = loss_gradient(params, loss)?;
    let mut probe = params.clone();
    let two = S::of(2.0);
    let mut worst = S::zero();
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + step;
        let plus = loss.value(&probe)?;
        probe.values_mut()[i] = orig - step;
        let minus = loss.value(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (plus - minus) / (two * step);
        let a = analytic.values()[i];
        let err = (a - numeric).abs() / (a.abs() + S::of(1e-8));
        if !err.is_finite() {
            return Err(LabError::Numeric {
                context: format!("finite difference at coordinate {i}"),
                value: err.to_f64_lossy(),
            });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `0.5 * ||params||^2`, the canonical smoke-test objective.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfSquaredNorm;

impl<S: Scalar> Objective<S> for HalfSquaredNorm {
    fn value(&self, params: &ParamSet<S>) -> Result<S> {
        Ok(params.values().iter().map(|&v| v * v).sum::<S>() * S::of(0.5))
    }

    fn value_and_grad(&self, params: &ParamSet<S>) -> Result<(S, ParamSet<S>)> {
        Ok((self.value(params)?, params.clone()))
    }
}
