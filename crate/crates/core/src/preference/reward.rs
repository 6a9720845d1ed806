use std::cmp::Ordering;

use crate::diffusion::checkpoint::{Checkpoint, Content, Provenance, Role, FORMAT_VERSION};
use crate::diffusion::mixture::{dist2, MixtureLayout};
use crate::diffusion::model::{Condition, SAMPLE_DIM};
use crate::error::{ensure_finite, LabError, Result};
use crate::numcore::mlp::MlpSpec;
use crate::weightalg::ParamSet;

/// Width of the analytic reward bump around each preferred mode.
pub const REWARD_BANDWIDTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Analytic,
    BradleyTerry,
}

/// Learned scorer: an MLP over `[x, one_hot(c)]` whose raw output is squashed
/// by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct BtNet {
    pub spec: MlpSpec,
    pub params: ParamSet<f64>,
}

impl BtNet {
    pub fn num_classes(&self) -> usize {
        self.spec.input_dim() - SAMPLE_DIM
    }

    pub(crate) fn input(&self, x: &[f64], class: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.spec.input_dim()];
        v[..SAMPLE_DIM].copy_from_slice(x);
        v[SAMPLE_DIM + class] = 1.0;
        v
    }

    pub fn raw_score(&self, x: &[f64], class: usize) -> f64 {
        self.spec
            .forward(self.params.values(), &self.input(x, class))
            .expect("validated at construction")[0]
    }
}

/// Scorer `R(x, c)` with values in `[0, 1]`; `inverted` scores `1 - R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    layout: MixtureLayout,
    net: Option<BtNet>,
    inverted: bool,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl RewardModel {
    pub fn analytic(layout: MixtureLayout) -> Self {
        Self {
            layout,
            net: None,
            inverted: false,
        }
    }

    pub fn bradley_terry(layout: MixtureLayout, net: BtNet) -> Result<Self> {
        net.spec.validate()?;
        if net.spec.input_dim() != SAMPLE_DIM + layout.num_classes || net.spec.output_dim() != 1 {
            return Err(LabError::config(format!(
                "scorer dims {:?} do not fit {} classes",
                net.spec.layer_dims, layout.num_classes
            )));
        }
        if net.params.len() != net.spec.param_count() {
            return Err(LabError::config("scorer parameter count mismatch"));
        }
        Ok(Self {
            layout,
            net: Some(net),
            inverted: false,
        })
    }

    pub fn kind(&self) -> RewardKind {
        match self.net {
            None => RewardKind::Analytic,
            Some(_) => RewardKind::BradleyTerry,
        }
    }

    pub fn is_inverted(&self) -> bool {
        self.inverted
    }

    pub fn layout(&self) -> &MixtureLayout {
        &self.layout
    }

    pub fn net(&self) -> Option<&BtNet> {
        self.net.as_ref()
    }

    fn class_of(&self, c: Condition) -> Result<usize> {
        match c {
            Condition::Class(k) if k < self.layout.num_classes => Ok(k),
            Condition::Class(k) => Err(LabError::argument(format!("unknown class {k}"))),
            Condition::Null => Err(LabError::argument("rewards are defined for real classes only")),
        }
    }

    fn check_x(x: &[f64]) -> Result<()> {
        if x.len() != SAMPLE_DIM {
            return Err(LabError::Shape {
                context: "reward sample",
                expected: vec![SAMPLE_DIM],
                actual: vec![x.len()],
            });
        }
        x.iter().try_for_each(|&v| ensure_finite("reward sample", v))
    }

    fn base_score(&self, x: &[f64], class: usize) -> f64 {
        match &self.net {
            None => {
                let m = self.layout.preferred_mode(class);
                (-dist2(x, &m) / (2.0 * REWARD_BANDWIDTH * REWARD_BANDWIDTH)).exp()
            }
            Some(net) => sigmoid(net.raw_score(x, class)),
        }
    }

    pub fn score(&self, x: &[f64], c: Condition) -> Result<f64> {
        Self::check_x(x)?;
        let class = self.class_of(c)?;
        let r = self.base_score(x, class);
        Ok(if self.inverted { 1.0 - r } else { r })
    }

    /// Orders `a` against `b` for condition `c`. Compares a pre-squashing key
    /// so far-apart samples whose scores both round to 0 or 1 still rank,
    /// and an inverted model reverses the order exactly.
    pub fn compare(&self, a: &[f64], b: &[f64], c: Condition) -> Result<Ordering> {
        Self::check_x(a)?;
        Self::check_x(b)?;
        let class = self.class_of(c)?;
        let ord = self
            .rank_key(a, class)
            .partial_cmp(&self.rank_key(b, class))
            .unwrap_or(Ordering::Equal);
        Ok(if self.inverted { ord.reverse() } else { ord })
    }

    /// Strictly increasing transform of the base score.
    fn rank_key(&self, x: &[f64], class: usize) -> f64 {
        match &self.net {
            None => -dist2(x, &self.layout.preferred_mode(class)),
            Some(net) => net.raw_score(x, class),
        }
    }

    /// Score and its gradient with respect to `x`.
    pub fn score_and_grad(&self, x: &[f64], c: Condition) -> Result<(f64, [f64; SAMPLE_DIM])> {
        Self::check_x(x)?;
        let class = self.class_of(c)?;
        let (r, g) = match &self.net {
            None => {
                let m = self.layout.preferred_mode(class);
                let r = self.base_score(x, class);
                let k = -r / (REWARD_BANDWIDTH * REWARD_BANDWIDTH);
                (r, [k * (x[0] - m[0]), k * (x[1] - m[1])])
            }
            Some(net) => {
                let (out, cache) = net.spec.forward_cached(net.params.values(), &net.input(x, class))?;
                let r = sigmoid(out[0]);
                let mut scratch = vec![0.0; net.params.len()];
                let gin = net
                    .spec
                    .backward(net.params.values(), &cache, &[r * (1.0 - r)], &mut scratch);
                (r, [gin[0], gin[1]])
            }
        };
        Ok(if self.inverted {
            (1.0 - r, [-g[0], -g[1]])
        } else {
            (r, g)
        })
    }

    pub fn to_checkpoint(&self, seed: u64, iterations: usize) -> Result<Checkpoint> {
        let net = self
            .net
            .as_ref()
            .ok_or_else(|| LabError::config("the analytic reward has no weights to store"))?;
        let method = if self.inverted {
            "bradley_terry+inverted"
        } else {
            "bradley_terry"
        };
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            mlp_spec: net.spec.clone(),
            cond_embed_dims: [self.layout.num_classes, 0],
            schedule: None,
            params: net.params.values().to_vec(),
            provenance: Provenance {
                role: Role::Reward,
                method: method.into(),
                seed,
                iterations,
                content: Content::Weights,
            },
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, layout: MixtureLayout) -> Result<Self> {
        if ck.provenance.role != Role::Reward {
            return Err(LabError::config("checkpoint is not a reward model"));
        }
        let params = ParamSet::new(ck.mlp_spec.manifest("scorer"), ck.params.clone())?;
        let mut model = Self::bradley_terry(
            layout,
            BtNet {
                spec: ck.mlp_spec.clone(),
                params,
            },
        )?;
        model.inverted = ck.provenance.method.ends_with("+inverted");
        Ok(model)
    }
}

/// Analytic preference score: a Gaussian bump centred on the preferred mode.
pub fn synthetic_reward(layout: &MixtureLayout, x: &[f64], c: Condition) -> Result<f64> {
    RewardModel::analytic(*layout).score(x, c)
}

/// Negated preference `1 - R(x, c)`.
pub fn invert_reward(r: &RewardModel) -> RewardModel {
    RewardModel {
        inverted: !r.inverted,
        ..r.clone()
    }
}
