use std::cmp::Ordering;

use rand::Rng;

use crate::diffusion::mixture::MixtureLayout;
use crate::diffusion::model::{Condition, SAMPLE_DIM};
use crate::error::{LabError, Result};
use crate::numcore::grad::{checked_value_and_grad, Objective};
use crate::numcore::mlp::MlpSpec;
use crate::preference::pairs::PreferencePair;
use crate::preference::reward::{sigmoid, softplus, BtNet, RewardModel};
use crate::rng::SeedStream;
use crate::weightalg::ParamSet;

/// Pairs per gradient step.
pub const BT_BATCH: usize = 64;

/// Mean `-log sigmoid(s(winner) - s(loser))` over a set of pairs.
pub struct BtObjective<'a> {
    pub spec: &'a MlpSpec,
    pub pairs: &'a [PreferencePair],
}

fn input(spec: &MlpSpec, x: &[f64], class: usize) -> Vec<f64> {
    let mut v = vec![0.0; spec.input_dim()];
    v[..SAMPLE_DIM].copy_from_slice(x);
    v[SAMPLE_DIM + class] = 1.0;
    v
}

impl BtObjective<'_> {
    fn check(&self, params: &ParamSet<f64>) -> Result<()> {
        if params.len() != self.spec.param_count() {
            return Err(LabError::Shape {
                context: "scorer parameters",
                expected: vec![self.spec.param_count()],
                actual: vec![params.len()],
            });
        }
        if self.pairs.is_empty() {
            return Err(LabError::data("no preference pairs"));
        }
        let classes = self.spec.input_dim().saturating_sub(SAMPLE_DIM);
        if let Some(p) = self.pairs.iter().find(|p| p.condition >= classes) {
            return Err(LabError::data(format!("pair condition {} out of range", p.condition)));
        }
        Ok(())
    }
}

impl Objective<f64> for BtObjective<'_> {
    fn value(&self, params: &ParamSet<f64>) -> Result<f64> {
        self.check(params)?;
        // the output bias cancels in every score difference; dropping it
        // keeps that cancellation exact in floating point
        let mut p = params.values().to_vec();
        *p.last_mut().expect("non-empty spec") = 0.0;
        let p = &p[..];
        let mut total = 0.0;
        for r in self.pairs {
            let sw = self.spec.forward(p, &input(self.spec, &r.winner, r.condition))?[0];
            let sl = self.spec.forward(p, &input(self.spec, &r.loser, r.condition))?[0];
            total += softplus(sl - sw);
        }
        Ok(total / self.pairs.len() as f64)
    }

    fn value_and_grad(&self, params: &ParamSet<f64>) -> Result<(f64, ParamSet<f64>)> {
        self.check(params)?;
        let p = params.values();
        let n = self.pairs.len() as f64;
        let mut grad = vec![0.0; p.len()];
        let mut total = 0.0;
        for r in self.pairs {
            let (sw, cw) = self.spec.forward_cached(p, &input(self.spec, &r.winner, r.condition))?;
            let (sl, cl) = self.spec.forward_cached(p, &input(self.spec, &r.loser, r.condition))?;
            let z = sl[0] - sw[0];
            total += softplus(z);
            // d softplus(z) / dz = sigmoid(z)
            let k = sigmoid(z) / n;
            self.spec.backward(p, &cw, &[-k], &mut grad);
            self.spec.backward(p, &cl, &[k], &mut grad);
        }
        Ok((total / n, params.with_values(grad)))
    }
}

/// Fits a scorer to ranked pairs with minibatch gradient descent. The output
/// layer starts at zero, so an untrained scorer ties every pair.
pub fn train_bradley_terry(
    pairs: &[PreferencePair],
    layout: MixtureLayout,
    spec: &MlpSpec,
    iters: usize,
    lr: f64,
    seed: u64,
) -> Result<RewardModel> {
    if pairs.is_empty() {
        return Err(LabError::data("cannot train a scorer on zero pairs"));
    }
    spec.validate()?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(LabError::config(format!("lr must be positive, got {lr}")));
    }
    let streams = SeedStream::new(seed);
    let mut init_rng = streams.rng("bt_init", 0);
    let mut params = ParamSet::new(spec.manifest("scorer"), spec.init_values(&mut init_rng, true))?;
    // validates the spec against the layout before any work
    RewardModel::bradley_terry(
        layout,
        BtNet {
            spec: spec.clone(),
            params: params.clone(),
        },
    )?;
    let mut batch = Vec::with_capacity(BT_BATCH);
    for iter in 0..iters {
        let mut rng = streams.rng("bt_batch", iter as u64);
        batch.clear();
        if pairs.len() <= BT_BATCH {
            batch.extend_from_slice(pairs);
        } else {
            batch.extend((0..BT_BATCH).map(|_| pairs[rng.random_range(0..pairs.len())]));
        }
        let objective = BtObjective { spec, pairs: &batch };
        let (_, grad) = checked_value_and_grad(&params, &objective).map_err(|e| match e {
            LabError::Numeric { context, value } => LabError::Training {
                iter,
                reason: format!("{context} = {value}"),
            },
            other => other,
        })?;
        params = params.axpy(-lr, &grad)?;
    }
    RewardModel::bradley_terry(
        layout,
        BtNet {
            spec: spec.clone(),
            params,
        },
    )
}

/// Fraction of pairs the scorer orders correctly; ties count half.
pub fn pairwise_accuracy(scorer: &RewardModel, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(LabError::data("no pairs to evaluate"));
    }
    let mut hits = 0.0;
    for p in pairs {
        hits += match scorer.compare(&p.winner, &p.loser, Condition::Class(p.condition))? {
            Ordering::Greater => 1.0,
            Ordering::Equal => 0.5,
            Ordering::Less => 0.0,
        };
    }
    Ok(hits / pairs.len() as f64)
}
