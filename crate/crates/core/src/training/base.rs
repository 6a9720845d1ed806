use rand::Rng;

use crate::diffusion::mixture::MixtureLayout;
use crate::diffusion::model::{Condition, EpsArch, EpsModel, SAMPLE_DIM};
use crate::diffusion::sampler::gaussian;
use crate::diffusion::schedule::ScheduleSpec;
use crate::error::Result;
use crate::numcore::grad::Objective;
use crate::rng::SeedStream;
use crate::training::{Optimizer, TrainConfig, TrainLog};
use crate::weightalg::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseItem {
    pub x0: [f64; SAMPLE_DIM],
    pub cond: Condition,
    pub t: usize,
    pub eps: [f64; SAMPLE_DIM],
}

/// Mean noise-matching error `||eps - eps_theta(alpha_t x0 + sigma_t eps, c, t)||^2`
/// over a fixed batch.
pub struct DenoiseObjective<'a> {
    pub model: &'a EpsModel<f64>,
    pub items: Vec<DenoiseItem>,
}

impl DenoiseObjective<'_> {
    fn noised(&self, item: &DenoiseItem) -> [f64; SAMPLE_DIM] {
        let (a, s) = self.model.schedule().coeffs(item.t);
        [a * item.x0[0] + s * item.eps[0], a * item.x0[1] + s * item.eps[1]]
    }
}

impl Objective<f64> for DenoiseObjective<'_> {
    fn value(&self, params: &ParamSet<f64>) -> Result<f64> {
        self.model.params().ensure_same_manifest(params)?;
        let total: f64 = self
            .items
            .iter()
            .map(|it| {
                let out = self.model.eps_with(params.values(), &self.noised(it), it.t, it.cond);
                sq_err(&it.eps, &out)
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
        for it in &self.items {
            let (out, cache) = self.model.eps_cached_with(p, &self.noised(it), it.t, it.cond);
            total += sq_err(&it.eps, &out);
            let g = [2.0 * (out[0] - it.eps[0]) / n, 2.0 * (out[1] - it.eps[1]) / n];
            self.model.eps_backward_with(p, &cache, &g, &mut grad);
        }
        Ok((total / n, params.with_values(grad)))
    }
}

pub(crate) fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fresh training batch for iteration `iter`: data from the mixture, uniform
/// timesteps, Gaussian noise, and condition dropout.
pub fn denoise_batch(
    model: &EpsModel<f64>,
    mixture: &MixtureLayout,
    cfg: &TrainConfig,
    data_seed: u64,
    iter: usize,
) -> Vec<DenoiseItem> {
    let mut rng = SeedStream::new(data_seed).rng("base_batch", iter as u64);
    let horizon = model.horizon();
    (0..cfg.batch)
        .map(|_| {
            let class = rng.random_range(0..mixture.num_classes);
            let (x0, _) = mixture.sample(class, &mut rng);
            let t = rng.random_range(1..=horizon);
            let eps = gaussian::<f64>(&mut rng);
            let cond = if rng.random::<f64>() < cfg.cond_dropout {
                Condition::Null
            } else {
                Condition::Class(class)
            };
            DenoiseItem { x0, cond, t, eps }
        })
        .collect()
}

pub fn init_model(arch: &EpsArch, schedule: ScheduleSpec, seed: u64) -> Result<EpsModel<f64>> {
    let mut rng = SeedStream::new(seed).rng("init", 0);
    EpsModel::init(arch.clone(), schedule, &mut rng)
}

/// Pretrains a conditional noise predictor on the mixture with plain
/// gradient descent. Initial weights derive from `cfg.seed`, data from
/// `data_seed`.
pub fn train_base(
    data_seed: u64,
    mixture: &MixtureLayout,
    schedule: ScheduleSpec,
    arch: &EpsArch,
    cfg: &TrainConfig,
) -> Result<(EpsModel<f64>, TrainLog)> {
    cfg.validate()?;
    mixture.validate()?;
    if arch.num_classes != mixture.num_classes {
        return Err(crate::LabError::config(format!(
            "model has {} classes but the data has {}",
            arch.num_classes, mixture.num_classes
        )));
    }
    let mut model = init_model(arch, schedule, cfg.seed)?;
    let mut log = TrainLog::default();
    let mut params = model.params().clone();
    let mut opt = Optimizer::new(cfg, params.len());
    for iter in 0..cfg.iters {
        let items = denoise_batch(&model, mixture, cfg, data_seed, iter);
        let objective = DenoiseObjective {
            model: &model,
            items,
        };
        params = opt.step(&params, &objective, iter, &mut log)?;
    }
    model = model.with_params(params)?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::ScheduleKind;
    use crate::numcore::grad::{finite_diff_check, loss_gradient};

    fn small() -> (EpsArch, ScheduleSpec) {
        (
            EpsArch {
                hidden: vec![8],
                cond_embed_dim: 3,
                ..EpsArch::default()
            },
            ScheduleSpec {
                steps: 50,
                kind: ScheduleKind::Cosine,
            },
        )
    }

    fn cfg(iters: usize, dropout: f64) -> TrainConfig {
        TrainConfig {
            iters,
            lr: 0.1,
            batch: 6,
            seed: 3,
            cond_dropout: dropout,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_step_matches_difference_gradient() {
        let (arch, sched) = small();
        let mix = MixtureLayout::default();
        let c = cfg(1, 0.5);
        let (trained, log) = train_base(9, &mix, sched, &arch, &c).unwrap();
        let init = init_model(&arch, sched, c.seed).unwrap();
        let obj = DenoiseObjective {
            model: &init,
            items: denoise_batch(&init, &mix, &c, 9, 0),
        };
        let h = 1e-6;
        let mut probe = init.params().clone();
        for i in 0..probe.len() {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + h;
            let up = obj.value(&probe).unwrap();
            probe.values_mut()[i] = orig - h;
            let down = obj.value(&probe).unwrap();
            probe.values_mut()[i] = orig;
            let want = orig - c.lr * (up - down) / (2.0 * h);
            assert!((trained.params().values()[i] - want).abs() < 1e-8, "coordinate {i}");
        }
        assert_eq!(log.entries.len(), 1);
        assert_eq!(log.entries[0].loss, obj.value(init.params()).unwrap());
    }

    #[test]
    fn null_row_untouched_without_dropout() {
        let (arch, sched) = small();
        let mix = MixtureLayout::default();
        let c = cfg(3, 0.0);
        let init = init_model(&arch, sched, c.seed).unwrap();
        let (trained, _) = train_base(2, &mix, sched, &arch, &c).unwrap();
        let e = arch.cond_embed_dim;
        let row = init.embed_range().start + init.embed_row(Condition::Null) * e;
        assert_eq!(
            &trained.params().values()[row..row + e],
            &init.params().values()[row..row + e]
        );
        let obj = DenoiseObjective {
            model: &init,
            items: denoise_batch(&init, &mix, &c, 2, 0),
        };
        let g = loss_gradient(init.params(), &obj).unwrap();
        assert!(g.values()[row..row + e].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_gradient_checks() {
        let (arch, sched) = small();
        let mix = MixtureLayout::default();
        for seed in 0..3 {
            let c = TrainConfig { seed, ..cfg(1, 0.3) };
            let m = init_model(&arch, sched, seed).unwrap();
            let obj = DenoiseObjective {
                model: &m,
                items: denoise_batch(&m, &mix, &c, seed, 0),
            };
            let err = finite_diff_check(m.params(), &obj, 1e-6).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn deterministic_and_class_checked() {
        let (arch, sched) = small();
        let mix = MixtureLayout::default();
        let a = train_base(4, &mix, sched, &arch, &cfg(5, 0.1)).unwrap();
        let b = train_base(4, &mix, sched, &arch, &cfg(5, 0.1)).unwrap();
        assert_eq!(a.0.params(), b.0.params());
        assert_eq!(a.1, b.1);
        let wrong = EpsArch {
            num_classes: 2,
            ..arch
        };
        assert!(train_base(4, &mix, sched, &wrong, &cfg(1, 0.1)).unwrap_err().is_config());
    }

    #[test]
    fn divergence_reports_iteration() {
        let (arch, sched) = small();
        let mix = MixtureLayout::default();
        let c = TrainConfig {
            lr: 1e6,
            ..cfg(50, 0.1)
        };
        match train_base(1, &mix, sched, &arch, &c) {
            Err(crate::LabError::Training { iter, .. }) => assert!(iter > 0),
            other => panic!("expected a training error, got {other:?}"),
        }
    }
}
