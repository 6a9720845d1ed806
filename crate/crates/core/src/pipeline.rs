//! Run configuration and the stages shared by the command line and the
//! end-to-end tests: base training, preference data, fine-tuning, and
//! sampler recipes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::checkpoint::{Checkpoint, Content, Provenance, Role};
use crate::diffusion::mixture::MixtureLayout;
use crate::diffusion::model::{Condition, EpsArch, EpsModel};
use crate::diffusion::sampler::SamplerSpec;
use crate::diffusion::schedule::ScheduleSpec;
use crate::error::{LabError, Result};
use crate::evalharness::paired::{cycled_items, EvalItem, SamplerConfig};
use crate::evalharness::sweep::SweepAxes;
use crate::preference::pairs::{make_pairs, perturb_pairs, CondSample, Perturbation, PreferencePair};
use crate::preference::reward::RewardModel;
use crate::rng::SeedStream;
use crate::training::base::train_base;
use crate::training::npo::{finetune, PoFamily, Polarity, PreferenceData};
use crate::training::{OptimizerKind, TrainConfig, TrainLog};
use crate::weightalg::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub mode: Perturbation,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub mixture: MixtureLayout,
    /// Mixture draws the preference pairs are built from.
    pub n_samples: usize,
    pub n_pairs: usize,
    /// Applied to the pairs of negative runs only.
    pub npo_perturbation: Option<PerturbSpec>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            mixture: MixtureLayout::default(),
            n_samples: 2000,
            n_pairs: 4000,
            npo_perturbation: None,
        }
    }
}

/// Per-stage optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub base: TrainConfig,
    pub dpo: TrainConfig,
    pub dr: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let common = TrainConfig::default();
        Self {
            base: TrainConfig {
                iters: 20_000,
                lr: 0.003,
                batch: 128,
                optimizer: OptimizerKind::Adam,
                ..common
            },
            dpo: TrainConfig {
                iters: 1000,
                lr: 3e-5,
                batch: 64,
                ..common
            },
            dr: TrainConfig {
                iters: 300,
                lr: 0.01,
                batch: 32,
                ..common
            },
        }
    }
}

impl TrainSection {
    pub fn for_family(&self, family: PoFamily) -> &TrainConfig {
        match family {
            PoFamily::Dpo => &self.dpo,
            PoFamily::Dr => &self.dr,
        }
    }
}

/// How the two guidance branches are assembled from `theta`, `eta`, `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    /// Single-model guidance with the base weights.
    Base,
    /// Single-model guidance with `theta + eta`.
    Classical,
    /// `theta + eta` against `theta + alpha eta + beta delta`.
    Compose { alpha: f64, beta: f64 },
    /// `theta + eta` against `theta + gamma eta`.
    Merge { gamma: f64 },
    /// Explicit weight checkpoints for each branch.
    Files { pos: PathBuf, neg: PathBuf },
}

impl Recipe {
    fn needs_eta(&self) -> bool {
        !matches!(self, Recipe::Base | Recipe::Files { .. })
    }

    fn needs_delta(&self) -> bool {
        matches!(self, Recipe::Compose { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n: usize,
    pub first_seed: u64,
    pub a: Recipe,
    pub b: Recipe,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n: 500,
            first_seed: 1_000_000,
            a: Recipe::Compose {
                alpha: 0.5,
                beta: 1.0,
            },
            b: Recipe::Classical,
        }
    }
}

impl EvalSection {
    pub fn items(&self, num_classes: usize) -> Vec<EvalItem> {
        cycled_items(self.n, num_classes, self.first_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n: usize,
    pub first_seed: u64,
    pub recipe: Recipe,
    /// Attach the reward of each sample.
    pub score: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n: 30,
            first_seed: 0,
            recipe: Recipe::Compose {
                alpha: 0.5,
                beta: 1.0,
            },
            score: true,
        }
    }
}

/// Checkpoint locations; unset entries default to `<output_dir>/<name>.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointPaths {
    pub base: Option<PathBuf>,
    pub po: Option<PathBuf>,
    pub eta: Option<PathBuf>,
    pub npo: Option<PathBuf>,
    pub delta: Option<PathBuf>,
    /// Learned reward; the analytic reward is used when unset.
    pub reward: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Base,
    Po,
    Eta,
    Npo,
    Delta,
}

impl Artifact {
    pub fn name(self) -> &'static str {
        match self {
            Artifact::Base => "base",
            Artifact::Po => "po",
            Artifact::Eta => "eta",
            Artifact::Npo => "npo",
            Artifact::Delta => "delta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: EpsArch,
    pub schedule: ScheduleSpec,
    pub train: TrainSection,
    pub sampler: SamplerSpec,
    pub eval: EvalSection,
    pub sample: SampleSection,
    pub sweep: SweepAxes,
    pub checkpoints: CheckpointPaths,
    pub global_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            model: EpsArch::default(),
            schedule: ScheduleSpec::default(),
            train: TrainSection::default(),
            sampler: SamplerSpec::default(),
            eval: EvalSection::default(),
            sample: SampleSection::default(),
            sweep: SweepAxes::default_grid(),
            checkpoints: CheckpointPaths::default(),
            global_seed: 0,
            output_dir: PathBuf::from("npolab-out"),
        }
    }
}

fn config_error(e: serde_json::Error) -> LabError {
    LabError::config(format!("invalid config: {e}"))
}

impl RunConfig {
    /// Strict parse: unknown keys are rejected.
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)
            .map_err(|e| LabError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Replaces the field at dotted `key` with `value`, parsed as JSON when
    /// possible and as a string otherwise.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| LabError::config(format!("unknown config key `{key}`")))?;
        }
        *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let cfg: Self = serde_json::from_value(root)
            .map_err(|e| LabError::config(format!("bad value for `{key}`: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.mixture.validate()?;
        if self.model.num_classes != self.data.mixture.num_classes {
            return Err(LabError::config(format!(
                "model.num_classes {} differs from data.mixture.num_classes {}",
                self.model.num_classes, self.data.mixture.num_classes
            )));
        }
        self.model.mlp_spec()?;
        if self.schedule.steps < 2 {
            return Err(LabError::config("schedule.T must be at least 2"));
        }
        for (name, t) in [("base", &self.train.base), ("dpo", &self.train.dpo), ("dr", &self.train.dr)] {
            t.validate()
                .map_err(|e| LabError::config(format!("train.{name}: {e}")))?;
        }
        self.sampler
            .validate()
            .map_err(|e| LabError::config(format!("sampler: {e}")))?;
        if self.sampler.steps > self.schedule.steps {
            return Err(LabError::config("sampler.steps exceeds schedule.T"));
        }
        if let Some(p) = self.data.npo_perturbation {
            if !(0.0..=1.0).contains(&p.strength) {
                return Err(LabError::config("data.npo_perturbation.strength must lie in [0, 1]"));
            }
        }
        for r in [&self.eval.a, &self.eval.b, &self.sample.recipe] {
            match *r {
                Recipe::Compose { alpha, beta } if !((0.0..=1.0).contains(&alpha) && (0.0..=1.0).contains(&beta)) => {
                    return Err(LabError::config("recipe scales must lie in [0, 1]"));
                }
                Recipe::Merge { gamma } if !(0.0..=1.0).contains(&gamma) => {
                    return Err(LabError::config("recipe scales must lie in [0, 1]"));
                }
                _ => {}
            }
        }
        self.sweep.validate()
    }

    pub fn path(&self, artifact: Artifact) -> PathBuf {
        let set = match artifact {
            Artifact::Base => &self.checkpoints.base,
            Artifact::Po => &self.checkpoints.po,
            Artifact::Eta => &self.checkpoints.eta,
            Artifact::Npo => &self.checkpoints.npo,
            Artifact::Delta => &self.checkpoints.delta,
        };
        set.clone()
            .unwrap_or_else(|| self.output_dir.join(format!("{}.json", artifact.name())))
    }

    /// Seed of stage `label`, derived from the global seed and a stage-local seed.
    pub fn stage_seed(&self, label: &str, local: u64) -> u64 {
        SeedStream::new(self.global_seed).seed(label, local)
    }
}

pub fn provenance(role: Role, method: &str, seed: u64, iterations: usize, content: Content) -> Provenance {
    Provenance {
        role,
        method: method.to_string(),
        seed,
        iterations,
        content,
    }
}

/// Trains the base model; returns it with its log and checkpoint.
pub fn run_train_base(cfg: &RunConfig) -> Result<(EpsModel<f64>, TrainLog, Checkpoint)> {
    let data_seed = cfg.stage_seed("base_data", cfg.train.base.seed);
    let train = TrainConfig {
        seed: cfg.stage_seed("base_init", cfg.train.base.seed),
        ..cfg.train.base
    };
    let (model, log) = train_base(data_seed, &cfg.data.mixture, cfg.schedule, &cfg.model, &train)?;
    let ck = Checkpoint::from_model(
        &model,
        provenance(Role::Base, "denoise", cfg.global_seed, train.iters, Content::Weights),
    );
    Ok((model, log, ck))
}

/// The scorer configured for the run.
pub fn run_scorer(cfg: &RunConfig) -> Result<RewardModel> {
    match &cfg.checkpoints.reward {
        None => Ok(RewardModel::analytic(cfg.data.mixture)),
        Some(p) => RewardModel::from_checkpoint(&Checkpoint::load(p)?, cfg.data.mixture),
    }
}

/// Ranked pairs over fresh mixture draws, classes visited in turn.
pub fn preference_pairs(cfg: &RunConfig, scorer: &RewardModel) -> Result<Vec<PreferencePair>> {
    let layout = &cfg.data.mixture;
    let mut rng = SeedStream::new(cfg.stage_seed("pair_samples", 0)).rng("mixture", 0);
    let samples: Vec<CondSample> = (0..cfg.data.n_samples)
        .map(|i| {
            let c = i % layout.num_classes;
            CondSample {
                x: layout.sample(c, &mut rng).0,
                c: Condition::Class(c),
            }
        })
        .collect();
    make_pairs(&samples, scorer, cfg.data.n_pairs, cfg.stage_seed("pairs", 0))
}

pub struct FinetuneOutput {
    pub model: EpsModel<f64>,
    pub offset: ParamSet<f64>,
    pub log: TrainLog,
    pub model_checkpoint: Checkpoint,
    pub offset_checkpoint: Checkpoint,
}

/// Fine-tunes `base` with one family and polarity. Positive and negative runs
/// share their batch seed, so a negative DPO run sees the same draws as its
/// positive counterpart with every pair reversed.
pub fn run_finetune(
    cfg: &RunConfig,
    base: &EpsModel<f64>,
    family: PoFamily,
    polarity: Polarity,
    scorer: &RewardModel,
) -> Result<FinetuneOutput> {
    let local = cfg.train.for_family(family);
    let label = match family {
        PoFamily::Dpo => "finetune_dpo",
        PoFamily::Dr => "finetune_dr",
    };
    let train = TrainConfig {
        seed: cfg.stage_seed(label, local.seed),
        ..*local
    };
    let pairs;
    let data = match family {
        PoFamily::Dpo => {
            let mut p = preference_pairs(cfg, scorer)?;
            if let (Polarity::Npo, Some(spec)) = (polarity, cfg.data.npo_perturbation) {
                p = perturb_pairs(&p, spec.mode, spec.strength, cfg.stage_seed("perturb", 0))?;
            }
            pairs = p;
            PreferenceData::Pairs(&pairs)
        }
        PoFamily::Dr => PreferenceData::Reward(scorer),
    };
    let (model, offset, log) = finetune(base, family, data, polarity, &train)?;
    let role = match polarity {
        Polarity::Po => Role::Po,
        Polarity::Npo => Role::Npo,
    };
    let method = family.method(polarity);
    let model_checkpoint = Checkpoint::from_model(
        &model,
        provenance(role, method, cfg.global_seed, train.iters, Content::Weights),
    );
    let offset_checkpoint = Checkpoint::from_offset(
        base,
        &offset,
        provenance(role, method, cfg.global_seed, train.iters, Content::Offset),
    )?;
    Ok(FinetuneOutput {
        model,
        offset,
        log,
        model_checkpoint,
        offset_checkpoint,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EpsModel<f64>> {
    Checkpoint::load(path)?.to_model()
}

/// Loads an offset stored in the layout of `like`.
pub fn load_offset(path: impl AsRef<Path>, like: &EpsModel<f64>) -> Result<ParamSet<f64>> {
    let ck = Checkpoint::load(path.as_ref())?;
    if ck.provenance.content != Content::Offset {
        return Err(LabError::config(format!(
            "{} holds weights, not an offset",
            path.as_ref().display()
        )));
    }
    ck.to_params_like(like)
}

/// Base model plus whichever offsets the recipes need, loaded from disk.
pub struct LoadedWeights {
    pub base: EpsModel<f64>,
    pub eta: Option<ParamSet<f64>>,
    pub delta: Option<ParamSet<f64>>,
}

impl LoadedWeights {
    pub fn load(cfg: &RunConfig, recipes: &[&Recipe]) -> Result<Self> {
        let base = load_model(cfg.path(Artifact::Base))?;
        let eta = if recipes.iter().any(|r| r.needs_eta()) {
            Some(load_offset(cfg.path(Artifact::Eta), &base)?)
        } else {
            None
        };
        let delta = if recipes.iter().any(|r| r.needs_delta()) {
            Some(load_offset(cfg.path(Artifact::Delta), &base)?)
        } else {
            None
        };
        Ok(Self { base, eta, delta })
    }

    pub fn sampler_config(&self, recipe: &Recipe, sampler: SamplerSpec) -> Result<SamplerConfig> {
        let theta = self.base.params();
        let eta = || {
            self.eta
                .as_ref()
                .ok_or_else(|| LabError::config("recipe needs the eta offset"))
        };
        match recipe {
            Recipe::Base => Ok(SamplerConfig::classical(theta.clone(), sampler)),
            Recipe::Classical => Ok(SamplerConfig::classical(theta.add(eta()?)?, sampler)),
            Recipe::Compose { alpha, beta } => {
                let delta = self
                    .delta
                    .as_ref()
                    .ok_or_else(|| LabError::config("recipe needs the delta offset"))?;
                SamplerConfig::composed(theta, eta()?, delta, *alpha, *beta, sampler)
            }
            Recipe::Merge { gamma } => SamplerConfig::merged(theta, eta()?, *gamma, sampler),
            Recipe::Files { pos, neg } => {
                let pos = load_model(pos)?;
                let neg = load_model(neg)?;
                if !(self.base.compatible(&pos) && self.base.compatible(&neg)) {
                    return Err(LabError::config("recipe checkpoints do not match the base model"));
                }
                Ok(SamplerConfig {
                    pos: pos.params().clone(),
                    neg: neg.params().clone(),
                    sampler,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"train": {"dpo": {"lr": 1e-4, "learning_rate": 2}}}"#).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("learning_rate"), "{err}");
        let err = RunConfig::default().with_override("train.dpo.momentum", "0.9").unwrap_err();
        assert!(err.to_string().contains("train.dpo.momentum"));
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::default()
            .with_override("train.dpo.lr", "0.001")
            .unwrap()
            .with_override("output_dir", "/tmp/x")
            .unwrap()
            .with_override("eval.a", r#"{"merge": {"gamma": 0.6}}"#)
            .unwrap();
        assert_eq!(cfg.train.dpo.lr, 0.001);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.eval.a, Recipe::Merge { gamma: 0.6 });
        assert!(RunConfig::default().with_override("train.dpo.lr", "-1").is_err());
        assert!(RunConfig::default().with_override("sampler.omega", "\"high\"").is_err());
    }

    #[test]
    fn artifact_paths() {
        let mut cfg = RunConfig::default();
        cfg.output_dir = PathBuf::from("out");
        assert_eq!(cfg.path(Artifact::Delta), PathBuf::from("out/delta.json"));
        cfg.checkpoints.base = Some(PathBuf::from("b.json"));
        assert_eq!(cfg.path(Artifact::Base), PathBuf::from("b.json"));
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.stage_seed("a", 0), cfg.stage_seed("b", 0));
        assert_ne!(cfg.stage_seed("a", 0), cfg.stage_seed("a", 1));
        let other = RunConfig {
            global_seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(cfg.stage_seed("a", 0), other.stage_seed("a", 0));
    }
}
