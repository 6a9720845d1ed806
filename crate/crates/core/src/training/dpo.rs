use rand::Rng;

use crate::diffusion::model::{Condition, EpsModel, SAMPLE_DIM};
use crate::diffusion::sampler::gaussian;
use crate::error::{LabError, Result};
use crate::numcore::grad::Objective;
use crate::preference::pairs::PreferencePair;
use crate::preference::reward::{sigmoid, softplus};
use crate::rng::SeedStream;
use crate::training::base::sq_err;
use crate::training::{Optimizer, TrainConfig, TrainLog};
use crate::weightalg::{offset, ParamSet};

/// One pair noised to a shared `(t, eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpoItem {
    pub winner: [f64; SAMPLE_DIM],
    pub loser: [f64; SAMPLE_DIM],
    pub cond: Condition,
    pub t: usize,
    pub eps: [f64; SAMPLE_DIM],
}

/// Pairwise denoising preference loss against a frozen reference:
/// `softplus(reg * ((e_w - e_w_ref) - (e_l - e_l_ref)))`, averaged over items,
/// where `e` is the squared noise-prediction error.
pub struct DpoObjective<'a> {
    model: &'a EpsModel<f64>,
    reference: &'a ParamSet<f64>,
    items: Vec<DpoItem>,
    reg: f64,
    /// Reference errors `(e_w_ref, e_l_ref)` per item.
    ref_err: Vec<(f64, f64)>,
}

impl<'a> DpoObjective<'a> {
    pub fn new(
        model: &'a EpsModel<f64>,
        reference: &'a ParamSet<f64>,
        items: Vec<DpoItem>,
        reg: f64,
    ) -> Result<Self> {
        model.params().ensure_same_manifest(reference)?;
        if items.is_empty() {
            return Err(LabError::data("empty preference batch"));
        }
        for it in &items {
            model.check_condition(it.cond)?;
        }
        let mut obj = Self {
            model,
            reference,
            items,
            reg,
            ref_err: Vec::new(),
        };
        obj.ref_err = obj
            .items
            .iter()
            .map(|it| {
                (
                    obj.err(reference.values(), &it.winner, it),
                    obj.err(reference.values(), &it.loser, it),
                )
            })
            .collect();
        Ok(obj)
    }

    pub fn reference(&self) -> &ParamSet<f64> {
        self.reference
    }

    fn noised(&self, x0: &[f64; SAMPLE_DIM], it: &DpoItem) -> [f64; SAMPLE_DIM] {
        let (a, s) = self.model.schedule().coeffs(it.t);
        [a * x0[0] + s * it.eps[0], a * x0[1] + s * it.eps[1]]
    }

    fn err(&self, p: &[f64], x0: &[f64; SAMPLE_DIM], it: &DpoItem) -> f64 {
        sq_err(&it.eps, &self.model.eps_with(p, &self.noised(x0, it), it.t, it.cond))
    }
}

impl Objective<f64> for DpoObjective<'_> {
    fn value(&self, params: &ParamSet<f64>) -> Result<f64> {
        self.model.params().ensure_same_manifest(params)?;
        let p = params.values();
        let total: f64 = self
            .items
            .iter()
            .zip(&self.ref_err)
            .map(|(it, &(rw, rl))| {
                let d = (self.err(p, &it.winner, it) - rw) - (self.err(p, &it.loser, it) - rl);
                softplus(self.reg * d)
            })
            .sum();
        Ok(total / self.items.len() as f64)
    }

    fn value_and_grad(&self, params: &ParamSet<f64>) -> Result<(f64, ParamSet<f64>)> {
        self.model.params().ensure_same_manifest(params)?;
        let p = params.values();
        let n = self.items.len() as f64;
        let mut grad = vec![0.0; p.len()];
        let mut total = 0.0;
        for (it, &(rw, rl)) in self.items.iter().zip(&self.ref_err) {
            let xw = self.noised(&it.winner, it);
            let xl = self.noised(&it.loser, it);
            let (ow, cw) = self.model.eps_cached_with(p, &xw, it.t, it.cond);
            let (ol, cl) = self.model.eps_cached_with(p, &xl, it.t, it.cond);
            let d = (sq_err(&it.eps, &ow) - rw) - (sq_err(&it.eps, &ol) - rl);
            total += softplus(self.reg * d);
            let k = sigmoid(self.reg * d) * self.reg / n;
            let gw = [2.0 * k * (ow[0] - it.eps[0]), 2.0 * k * (ow[1] - it.eps[1])];
            let gl = [-2.0 * k * (ol[0] - it.eps[0]), -2.0 * k * (ol[1] - it.eps[1])];
            self.model.eps_backward_with(p, &cw, &gw, &mut grad);
            self.model.eps_backward_with(p, &cl, &gl, &mut grad);
        }
        Ok((total / n, params.with_values(grad)))
    }
}

/// Batch for iteration `iter`. Indices, timesteps, noise and dropout come
/// from `(seed, iter)` alone, so a batch built from reversed pairs holds the
/// same draws with winner and loser swapped.
pub fn dpo_batch(
    pairs: &[PreferencePair],
    horizon: usize,
    cfg: &TrainConfig,
    iter: usize,
) -> Vec<DpoItem> {
    let mut rng = SeedStream::new(cfg.seed).rng("dpo_batch", iter as u64);
    let n = cfg.batch.min(pairs.len());
    (0..n)
        .map(|_| {
            let p = &pairs[rng.random_range(0..pairs.len())];
            let t = rng.random_range(1..=horizon);
            let eps = gaussian::<f64>(&mut rng);
            let cond = if rng.random::<f64>() < cfg.cond_dropout {
                Condition::Null
            } else {
                Condition::Class(p.condition)
            };
            DpoItem {
                winner: p.winner,
                loser: p.loser,
                cond,
                t,
                eps,
            }
        })
        .collect()
}

/// Fine-tunes `base` on ranked pairs with the base as frozen reference.
/// Returns the tuned model, the offset from `base`, and the loss log.
pub fn finetune_dpo(
    base: &EpsModel<f64>,
    pairs: &[PreferencePair],
    cfg: &TrainConfig,
) -> Result<(EpsModel<f64>, ParamSet<f64>, TrainLog)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(LabError::data("fine-tuning needs at least one preference pair"));
    }
    if let Some(p) = pairs.iter().find(|p| p.condition >= base.num_classes()) {
        return Err(LabError::data(format!("pair condition {} out of range", p.condition)));
    }
    let reference = base.params().clone();
    let mut params = reference.clone();
    let mut opt = Optimizer::new(cfg, params.len());
    let mut log = TrainLog::default();
    for iter in 0..cfg.iters {
        let items = dpo_batch(pairs, base.horizon(), cfg, iter);
        let objective = DpoObjective::new(base, &reference, items, cfg.reg)?;
        params = opt.step(&params, &objective, iter, &mut log)?;
    }
    let eta = offset(&params, &reference)?;
    Ok((base.with_params(params)?, eta, log))
}
