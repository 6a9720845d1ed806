use serde::{Deserialize, Serialize};

use crate::diffusion::model::{Condition, EpsModel, SAMPLE_DIM};
use crate::diffusion::sampler::{reverse_sample, SamplerSpec};
use crate::error::{LabError, Result};
use crate::evalharness::report::EvalReport;
use crate::preference::reward::{RewardKind, RewardModel};
use crate::weightalg::{compose_neg, merge_convex, ParamSet};

/// Weights for both guidance branches plus the sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub pos: ParamSet<f64>,
    pub neg: ParamSet<f64>,
    pub sampler: SamplerSpec,
}

impl SamplerConfig {
    /// Single-model guidance: both branches use `weights`.
    pub fn classical(weights: ParamSet<f64>, sampler: SamplerSpec) -> Self {
        Self {
            neg: weights.clone(),
            pos: weights,
            sampler,
        }
    }

    /// Positive branch `theta + eta`, negative `theta + alpha eta + beta delta`.
    pub fn composed(
        theta: &ParamSet<f64>,
        eta: &ParamSet<f64>,
        delta: &ParamSet<f64>,
        alpha: f64,
        beta: f64,
        sampler: SamplerSpec,
    ) -> Result<Self> {
        Ok(Self {
            pos: theta.add(eta)?,
            neg: compose_neg(theta, eta, delta, alpha, beta)?,
            sampler,
        })
    }

    /// Positive branch `theta + eta`, negative the merge `theta + gamma eta`.
    pub fn merged(
        theta: &ParamSet<f64>,
        eta: &ParamSet<f64>,
        gamma: f64,
        sampler: SamplerSpec,
    ) -> Result<Self> {
        Ok(Self {
            pos: theta.add(eta)?,
            neg: merge_convex(theta, eta, gamma)?,
            sampler,
        })
    }
}

/// One paired draw: both samplers see the same condition and noise seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub condition: usize,
    pub seed: u64,
}

/// Every `(condition, seed)` combination, condition-major.
pub fn cross_items(conditions: &[usize], seeds: &[u64]) -> Vec<EvalItem> {
    conditions
        .iter()
        .flat_map(|&condition| seeds.iter().map(move |&seed| EvalItem { condition, seed }))
        .collect()
}

/// `n` items with seeds `first_seed..` and conditions cycling over the classes.
pub fn cycled_items(n: usize, num_classes: usize, first_seed: u64) -> Vec<EvalItem> {
    (0..n)
        .map(|i| EvalItem {
            condition: i % num_classes.max(1),
            seed: first_seed + i as u64,
        })
        .collect()
}

/// Metric label for reports scored by `scorer`.
pub fn metric_name(scorer: &RewardModel) -> String {
    let base = match scorer.kind() {
        RewardKind::Analytic => "synthetic_reward",
        RewardKind::BradleyTerry => "bradley_terry",
    };
    if scorer.is_inverted() {
        format!("{base}_inverted")
    } else {
        base.to_string()
    }
}

/// Guided samples of `cfg` for each item; `template` supplies the
/// architecture and schedule.
pub fn sample_items(
    template: &EpsModel<f64>,
    cfg: &SamplerConfig,
    items: &[EvalItem],
) -> Result<Vec<[f64; SAMPLE_DIM]>> {
    let pos = template.with_params(cfg.pos.clone())?;
    let neg = template.with_params(cfg.neg.clone())?;
    items
        .iter()
        .map(|it| {
            let x = reverse_sample(&pos, &neg, Condition::Class(it.condition), &cfg.sampler, it.seed)?;
            Ok([x.data()[0], x.data()[1]])
        })
        .collect()
}

pub fn score_items(
    template: &EpsModel<f64>,
    cfg: &SamplerConfig,
    items: &[EvalItem],
    scorer: &RewardModel,
) -> Result<Vec<f64>> {
    let samples = sample_items(template, cfg, items)?;
    samples
        .iter()
        .zip(items)
        .map(|(x, it)| scorer.score(x, Condition::Class(it.condition)))
        .collect()
}

/// Compares `a` against `b` on shared conditions and noise seeds.
pub fn paired_eval(
    template: &EpsModel<f64>,
    a: &SamplerConfig,
    b: &SamplerConfig,
    items: &[EvalItem],
    scorer: &RewardModel,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(LabError::argument("paired evaluation needs at least one item"));
    }
    let sa = score_items(template, a, items, scorer)?;
    let sb = score_items(template, b, items, scorer)?;
    EvalReport::from_scores(&sa, &sb)
}
