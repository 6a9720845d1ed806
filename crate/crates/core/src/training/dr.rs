use rand::Rng;

use crate::diffusion::model::{Condition, EpsModel, SAMPLE_DIM};
use crate::diffusion::sampler::{gaussian, timesteps};
use crate::error::{LabError, Result};
use crate::numcore::grad::Objective;
use crate::preference::reward::RewardModel;
use crate::rng::SeedStream;
use crate::training::{Optimizer, TrainConfig, TrainLog};
use crate::weightalg::{offset, ParamSet};

/// One deterministic sampler update `x' = a x + b eps(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerStep {
    pub t: usize,
    pub a: f64,
    pub b: f64,
}

/// The deterministic sampler as a list of affine-in-eps updates; the final
/// entry maps to the clean-sample estimate.
pub fn deterministic_steps(model: &EpsModel<f64>, steps: usize) -> Result<Vec<SamplerStep>> {
    let ts = timesteps(model.horizon(), steps)?;
    let sched = model.schedule();
    Ok(ts
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (a, s) = sched.coeffs(t);
            match ts.get(i + 1) {
                Some(&t2) => {
                    let (a2, s2) = sched.coeffs(t2);
                    SamplerStep {
                        t,
                        a: a2 / a,
                        b: s2 - a2 * s / a,
                    }
                }
                None => SamplerStep {
                    t,
                    a: 1.0 / a,
                    b: -s / a,
                },
            }
        })
        .collect())
}

/// A trajectory entering the differentiable tail of the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrItem {
    /// State before the first tail step, held constant under differentiation.
    pub x: [f64; SAMPLE_DIM],
    /// Condition fed to the model (null when dropped out).
    pub cond: Condition,
    /// Class the reward is evaluated for.
    pub class: usize,
}

/// Negative mean reward of samples produced by running `tail` from each item.
pub struct DrObjective<'a> {
    pub model: &'a EpsModel<f64>,
    pub reward: &'a RewardModel,
    pub tail: Vec<SamplerStep>,
    pub items: Vec<DrItem>,
}

impl DrObjective<'_> {
    fn check(&self, params: &ParamSet<f64>) -> Result<()> {
        self.model.params().ensure_same_manifest(params)?;
        if self.items.is_empty() {
            return Err(LabError::data("empty reward batch"));
        }
        Ok(())
    }
}

impl Objective<f64> for DrObjective<'_> {
    fn value(&self, params: &ParamSet<f64>) -> Result<f64> {
        self.check(params)?;
        let p = params.values();
        let mut total = 0.0;
        for it in &self.items {
            let mut x = it.x;
            for s in &self.tail {
                let e = self.model.eps_with(p, &x, s.t, it.cond);
                x = [s.a * x[0] + s.b * e[0], s.a * x[1] + s.b * e[1]];
            }
            total += self.reward.score(&x, Condition::Class(it.class))?;
        }
        Ok(-total / self.items.len() as f64)
    }

    fn value_and_grad(&self, params: &ParamSet<f64>) -> Result<(f64, ParamSet<f64>)> {
        self.check(params)?;
        let p = params.values();
        let n = self.items.len() as f64;
        let mut grad = vec![0.0; p.len()];
        let mut total = 0.0;
        let mut caches = Vec::with_capacity(self.tail.len());
        for it in &self.items {
            caches.clear();
            let mut x = it.x;
            for s in &self.tail {
                let (e, cache) = self.model.eps_cached_with(p, &x, s.t, it.cond);
                caches.push(cache);
                x = [s.a * x[0] + s.b * e[0], s.a * x[1] + s.b * e[1]];
            }
            let (r, gr) = self.reward.score_and_grad(&x, Condition::Class(it.class))?;
            total += r;
            let mut gx = [-gr[0] / n, -gr[1] / n];
            for (s, cache) in self.tail.iter().zip(&caches).rev() {
                let ge = [s.b * gx[0], s.b * gx[1]];
                let via_eps = self.model.eps_backward_with(p, cache, &ge, &mut grad);
                gx = [s.a * gx[0] + via_eps[0], s.a * gx[1] + via_eps[1]];
            }
        }
        Ok((-total / n, params.with_values(grad)))
    }
}

/// Batch for iteration `iter`: fresh starting noise run through the first
/// `dr_steps - dr_truncate` steps under `params` without tracking gradients.
pub fn dr_batch(
    model: &EpsModel<f64>,
    params: &ParamSet<f64>,
    steps: &[SamplerStep],
    cfg: &TrainConfig,
    iter: usize,
) -> Vec<DrItem> {
    let mut rng = SeedStream::new(cfg.seed).rng("dr_batch", iter as u64);
    let prefix = &steps[..steps.len() - cfg.dr_truncate];
    (0..cfg.batch)
        .map(|_| {
            let class = rng.random_range(0..model.num_classes());
            let cond = if rng.random::<f64>() < cfg.cond_dropout {
                Condition::Null
            } else {
                Condition::Class(class)
            };
            let mut x = gaussian::<f64>(&mut rng);
            for s in prefix {
                let e = model.eps_with(params.values(), &x, s.t, cond);
                x = [s.a * x[0] + s.b * e[0], s.a * x[1] + s.b * e[1]];
            }
            DrItem { x, cond, class }
        })
        .collect()
}

/// Fine-tunes `base` to ascend `reward` on its own deterministic samples,
/// backpropagating through the last `cfg.dr_truncate` sampler steps.
pub fn finetune_dr(
    base: &EpsModel<f64>,
    reward: &RewardModel,
    cfg: &TrainConfig,
) -> Result<(EpsModel<f64>, ParamSet<f64>, TrainLog)> {
    cfg.validate()?;
    if reward.layout().num_classes != base.num_classes() {
        return Err(LabError::config(format!(
            "reward covers {} classes but the model has {}",
            reward.layout().num_classes,
            base.num_classes()
        )));
    }
    if cfg.dr_steps > base.horizon() {
        return Err(LabError::config(format!(
            "dr_steps {} exceeds the schedule horizon {}",
            cfg.dr_steps,
            base.horizon()
        )));
    }
    let steps = deterministic_steps(base, cfg.dr_steps)?;
    let tail = steps[steps.len() - cfg.dr_truncate..].to_vec();
    let mut params = base.params().clone();
    let mut opt = Optimizer::new(cfg, params.len());
    let mut log = TrainLog::default();
    for iter in 0..cfg.iters {
        let items = dr_batch(base, &params, &steps, cfg, iter);
        let objective = DrObjective {
            model: base,
            reward,
            tail: tail.clone(),
            items,
        };
        params = opt.step(&params, &objective, iter, &mut log)?;
    }
    let eta = offset(&params, base.params())?;
    Ok((base.with_params(params)?, eta, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::mixture::MixtureLayout;
    use crate::diffusion::model::EpsArch;
    use crate::diffusion::sampler::{sample_conditional, SamplerMode};
    use crate::diffusion::schedule::{ScheduleKind, ScheduleSpec};
    use crate::numcore::grad::finite_diff_check;
    use crate::preference::reward::invert_reward;

    fn model(seed: u64) -> EpsModel<f64> {
        let arch = EpsArch {
            hidden: vec![8],
            cond_embed_dim: 3,
            ..EpsArch::default()
        };
        let sched = ScheduleSpec {
            steps: 40,
            kind: ScheduleKind::Cosine,
        };
        crate::training::base::init_model(&arch, sched, seed).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            iters: 2,
            lr: 0.05,
            batch: 4,
            seed: 8,
            dr_steps: 6,
            dr_truncate: 3,
            cond_dropout: 0.25,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn step_list_reproduces_the_sampler() {
        let m = model(1);
        let steps = deterministic_steps(&m, 7).unwrap();
        let want = sample_conditional(&m, Condition::Class(1), 7, SamplerMode::Deterministic, 42).unwrap();
        let mut rng = crate::diffusion::sampler::sample_rng(42, Condition::Class(1));
        let mut x = gaussian::<f64>(&mut rng);
        for s in &steps {
            let e = m.eps_raw(&x, s.t, Condition::Class(1));
            x = [s.a * x[0] + s.b * e[0], s.a * x[1] + s.b * e[1]];
        }
        for i in 0..2 {
            assert!((x[i] - want.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lr_gives_zero_offset() {
        let m = model(2);
        let r = RewardModel::analytic(MixtureLayout::default());
        let (_, eta, _) = finetune_dr(&m, &r, &TrainConfig { lr: 0.0, ..cfg() }).unwrap();
        assert_eq!(eta.norm(), 0.0);
    }

    #[test]
    fn one_step_matches_chain_rule() {
        let m = model(3);
        let r = RewardModel::analytic(MixtureLayout::default());
        let c = TrainConfig {
            iters: 1,
            dr_truncate: 1,
            ..cfg()
        };
        let (tuned, _, _) = finetune_dr(&m, &r, &c).unwrap();
        let steps = deterministic_steps(&m, c.dr_steps).unwrap();
        let last = *steps.last().unwrap();
        let items = dr_batch(&m, m.params(), &steps, &c, 0);
        // d(-mean R)/d theta = -(1/n) sum_i grad_x R . b . d eps / d theta,
        // with the eps Jacobian assembled row by row
        let p = m.params().values();
        let mut want = vec![0.0; p.len()];
        for it in &items {
            let (e, cache) = m.eps_cached_with(p, &it.x, last.t, it.cond);
            let xf = [last.a * it.x[0] + last.b * e[0], last.a * it.x[1] + last.b * e[1]];
            let (_, gr) = r.score_and_grad(&xf, Condition::Class(it.class)).unwrap();
            for k in 0..2 {
                let mut row = vec![0.0; p.len()];
                let mut unit = [0.0; 2];
                unit[k] = 1.0;
                m.eps_backward_with(p, &cache, &unit, &mut row);
                for (w, j) in want.iter_mut().zip(&row) {
                    *w += -gr[k] * last.b * j / items.len() as f64;
                }
            }
        }
        for (i, (&got, &g)) in tuned.params().values().iter().zip(&want).enumerate() {
            assert!((got - (p[i] - c.lr * g)).abs() < 1e-8, "coordinate {i}");
        }
    }

    #[test]
    fn loss_gradient_checks() {
        let m = model(4);
        let layout = MixtureLayout::default();
        for (seed, r) in [RewardModel::analytic(layout), invert_reward(&RewardModel::analytic(layout))]
            .iter()
            .enumerate()
        {
            let c = TrainConfig { seed: seed as u64, ..cfg() };
            let steps = deterministic_steps(&m, c.dr_steps).unwrap();
            // start the tail near the modes so the reward gradient is not negligible
            let items = dr_batch(&m, m.params(), &steps, &c, 0)
                .into_iter()
                .map(|it| DrItem {
                    x: layout.preferred_mode(it.class),
                    ..it
                })
                .collect();
            let obj = DrObjective {
                model: &m,
                reward: r,
                tail: steps[steps.len() - c.dr_truncate..].to_vec(),
                items,
            };
            let err = finite_diff_check(m.params(), &obj, 1e-6).unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn configuration_errors() {
        let m = model(5);
        let r = RewardModel::analytic(MixtureLayout {
            num_classes: 4,
            ..MixtureLayout::default()
        });
        assert!(finetune_dr(&m, &r, &cfg()).unwrap_err().is_config());
        let ok = RewardModel::analytic(MixtureLayout::default());
        let long = TrainConfig { dr_steps: 41, dr_truncate: 2, ..cfg() };
        assert!(finetune_dr(&m, &ok, &long).unwrap_err().is_config());
    }
}
