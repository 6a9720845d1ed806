//! Training loops: base denoiser pretraining, preference fine-tuning
//! (pairwise and differentiable-reward families) and their negative
//! counterparts.

pub mod base;
pub mod dpo;
pub mod dr;
pub mod npo;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numcore::grad::{checked_value_and_grad, Objective};
use crate::weightalg::ParamSet;

pub use base::{denoise_batch, init_model, train_base, DenoiseItem, DenoiseObjective};
pub use dpo::{dpo_batch, finetune_dpo, DpoItem, DpoObjective};
pub use dr::{deterministic_steps, dr_batch, finetune_dr, DrItem, DrObjective, SamplerStep};
pub use npo::{finetune, train_npo, PoFamily, Polarity, PreferenceData};


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iters: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Strength of the pairwise preference loss.
    pub reg: f64,
    /// Number of final sampler steps the reward gradient flows through.
    pub dr_truncate: usize,
    /// Sampler steps used to generate samples during reward fine-tuning.
    pub dr_steps: usize,
    /// Probability of replacing the condition with the null condition.
    pub cond_dropout: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// `theta <- theta - lr * g`.
    #[default]
    Sgd,
    /// Adam with cosine learning-rate decay to zero.
    Adam,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 20_000,
            lr: 0.05,
            batch: 128,
            seed: 0,
            reg: 500.0,
            dr_truncate: 5,
            dr_steps: 20,
            cond_dropout: 0.1,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::config(msg));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.reg.is_finite() && self.reg > 0.0) {
            return bad(format!("reg must be positive, got {}", self.reg));
        }
        if self.dr_truncate == 0 || self.dr_steps == 0 || self.dr_truncate > self.dr_steps {
            return bad(format!(
                "need 1 <= dr_truncate ({}) <= dr_steps ({})",
                self.dr_truncate, self.dr_steps
            ));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return bad(format!("cond_dropout must lie in [0, 1], got {}", self.cond_dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| LabError::io(path, e))
    }
}

/// Deterministic first-order optimizer state.
#[derive(Debug, Clone)]
pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    iters: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub(crate) fn new(cfg: &TrainConfig, n: usize) -> Self {
        let state = match cfg.optimizer {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => n,
        };
        Self {
            kind: cfg.optimizer,
            lr: cfg.lr,
            iters: cfg.iters,
            m: vec![0.0; state],
            v: vec![0.0; state],
        }
    }

    /// Evaluates the objective, logs, and returns the updated parameters.
    pub(crate) fn step<O: Objective<f64>>(
        &mut self,
        params: &ParamSet<f64>,
        objective: &O,
        iter: usize,
        log: &mut TrainLog,
    ) -> Result<ParamSet<f64>> {
        let (loss, grad) =
            checked_value_and_grad(params, objective).map_err(|e| diverged(iter, e))?;
        log.entries.push(LogEntry {
            iter,
            loss,
            grad_norm: grad.norm(),
        });
        match self.kind {
            OptimizerKind::Sgd => params.axpy(-self.lr, &grad).map_err(|e| diverged(iter, e)),
            OptimizerKind::Adam => {
                let k = (iter + 1) as i32;
                let progress = iter as f64 / self.iters.max(1) as f64;
                let lr = self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
                let (c1, c2) = (1.0 - Self::BETA1.powi(k), 1.0 - Self::BETA2.powi(k));
                let mut values = params.values().to_vec();
                for (i, (p, &g)) in values.iter_mut().zip(grad.values()).enumerate() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    *p -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                }
                ParamSet::new(params.manifest().to_vec(), values).map_err(|e| diverged(iter, e))
            }
        }
    }
}

fn diverged(iter: usize, e: LabError) -> LabError {
    match e {
        LabError::Numeric { context, value } => LabError::Training {
            iter,
            reason: format!("{context} = {value}"),
        },
        other => other,
    }
}
