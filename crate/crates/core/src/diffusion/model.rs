use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diffusion::schedule::{NoiseSchedule, ScheduleSpec};
use crate::error::{LabError, Result};
use crate::numcore::mlp::{Activation, MlpCache, MlpSpec};
use crate::numcore::tensor::{check_finite, DenseTensor};
use crate::scalar::Scalar;
use crate::weightalg::{ParamSet, TensorSpec};

pub const SAMPLE_DIM: usize = 2;
pub const TIME_EMBED_DIM: usize = 8;
pub const COND_EMBED_NAME: &str = "cond_embed";

/// Conditioning input: a class id or the reserved null condition used for
/// the unconditional / negative branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Class(usize),
    Null,
}

impl Condition {
    pub fn class(self) -> Option<usize> {
        match self {
            Condition::Class(c) => Some(c),
            Condition::Null => None,
        }
    }
}

impl Serialize for Condition {
    fn serialize<Se: Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        match self {
            Condition::Class(c) => s.serialize_u64(*c as u64),
            Condition::Null => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match Option::<usize>::deserialize(d)? {
            Some(c) => Condition::Class(c),
            None => Condition::Null,
        })
    }
}

/// Sinusoidal features of `t / T` at octave frequencies.
pub fn time_embedding<S: Scalar>(t: usize, horizon: usize) -> [S; TIME_EMBED_DIM] {
    let s = t as f64 / horizon as f64;
    let mut out = [S::zero(); TIME_EMBED_DIM];
    for k in 0..TIME_EMBED_DIM / 2 {
        let w = std::f64::consts::PI * (1u32 << k) as f64 * s;
        out[2 * k] = S::of(w.sin());
        out[2 * k + 1] = S::of(w.cos());
    }
    out
}

/// Architecture of an epsilon-prediction model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsArch {
    pub num_classes: usize,
    pub cond_embed_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for EpsArch {
    fn default() -> Self {
        Self {
            num_classes: 3,
            cond_embed_dim: 8,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

impl EpsArch {
    pub fn mlp_spec(&self) -> Result<MlpSpec> {
        let mut dims = vec![SAMPLE_DIM + TIME_EMBED_DIM + self.cond_embed_dim];
        dims.extend(&self.hidden);
        dims.push(SAMPLE_DIM);
        MlpSpec::new(dims, self.activation)
    }

    pub fn manifest(&self) -> Result<Vec<TensorSpec>> {
        let mut m = self.mlp_spec()?.manifest("mlp");
        m.push(TensorSpec::new(
            COND_EMBED_NAME,
            vec![self.num_classes + 1, self.cond_embed_dim],
        ));
        Ok(m)
    }
}

/// Conditional noise predictor `eps(x_t, c, t)`: an MLP over
/// `[x_t, time features, condition embedding]` plus a learned embedding table
/// whose last row belongs to the null condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsModel<S> {
    arch: EpsArch,
    spec: MlpSpec,
    params: ParamSet<S>,
    schedule: NoiseSchedule<S>,
    mlp_len: usize,
}

/// Forward intermediates for one `eps` evaluation.
#[derive(Debug, Clone)]
pub struct EpsCache<S> {
    mlp: MlpCache<S>,
    row: usize,
}

impl<S: Scalar> EpsModel<S> {
    pub fn new(arch: EpsArch, schedule: ScheduleSpec, params: ParamSet<S>) -> Result<Self> {
        if arch.num_classes == 0 || arch.cond_embed_dim == 0 {
            return Err(LabError::config("model needs at least one class and embedding dim"));
        }
        let spec = arch.mlp_spec()?;
        let expected = ParamSet::<S>::zeros(arch.manifest()?);
        expected.ensure_same_manifest(&params)?;
        Ok(Self {
            mlp_len: spec.param_count(),
            spec,
            schedule: schedule.build()?,
            arch,
            params,
        })
    }

    /// Random initialisation: scaled-normal MLP weights, unit-normal embeddings.
    pub fn init(arch: EpsArch, schedule: ScheduleSpec, rng: &mut impl Rng) -> Result<Self> {
        let spec = arch.mlp_spec()?;
        let mut values: Vec<S> = spec.init_values(rng, false);
        for _ in 0..(arch.num_classes + 1) * arch.cond_embed_dim {
            let z: f64 = rng.sample(StandardNormal);
            values.push(S::of(z));
        }
        let params = ParamSet::new(arch.manifest()?, values)?;
        Self::new(arch, schedule, params)
    }

    pub fn zeros(arch: EpsArch, schedule: ScheduleSpec) -> Result<Self> {
        let params = ParamSet::zeros(arch.manifest()?);
        Self::new(arch, schedule, params)
    }

    /// Same architecture and schedule with different weights.
    pub fn with_params(&self, params: ParamSet<S>) -> Result<Self> {
        self.params.ensure_same_manifest(&params)?;
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn arch(&self) -> &EpsArch {
        &self.arch
    }

    pub fn mlp_spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule<S> {
        &self.schedule
    }

    pub fn horizon(&self) -> usize {
        self.schedule.len()
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// True when both models can share a sampler (same architecture and schedule).
    pub fn compatible(&self, other: &Self) -> bool {
        self.arch == other.arch && self.schedule.spec() == other.schedule.spec()
    }

    pub fn check_condition(&self, c: Condition) -> Result<()> {
        match c {
            Condition::Class(k) if k >= self.arch.num_classes => Err(LabError::argument(format!(
                "condition {k} outside 0..{}",
                self.arch.num_classes
            ))),
            _ => Ok(()),
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon() {
            return Err(LabError::argument(format!(
                "timestep {t} outside 1..={}",
                self.horizon()
            )));
        }
        Ok(())
    }

    pub(crate) fn embed_row(&self, c: Condition) -> usize {
        match c {
            Condition::Class(k) => k,
            Condition::Null => self.arch.num_classes,
        }
    }

    #[cfg(test)]
    pub(crate) fn embed_range(&self) -> std::ops::Range<usize> {
        self.mlp_len..self.params.len()
    }

    fn input(&self, params: &[S], x: &[S], t: usize, c: Condition) -> Vec<S> {
        let e = self.arch.cond_embed_dim;
        let row = self.embed_row(c);
        let table = &params[self.mlp_len..];
        let mut input = Vec::with_capacity(self.spec.input_dim());
        input.extend_from_slice(x);
        input.extend(time_embedding::<S>(t, self.horizon()));
        input.extend_from_slice(&table[row * e..(row + 1) * e]);
        input
    }

    /// Evaluation with explicit weights in this model's layout. Arguments
    /// are trusted (validated by the public entry points).
    pub(crate) fn eps_with(&self, params: &[S], x: &[S], t: usize, c: Condition) -> Vec<S> {
        let input = self.input(params, x, t, c);
        self.spec
            .forward(&params[..self.mlp_len], &input)
            .expect("input assembled from a validated layout")
    }

    pub(crate) fn eps_raw(&self, x: &[S], t: usize, c: Condition) -> Vec<S> {
        self.eps_with(self.params.values(), x, t, c)
    }

    pub(crate) fn eps_cached_with(
        &self,
        params: &[S],
        x: &[S],
        t: usize,
        c: Condition,
    ) -> (Vec<S>, EpsCache<S>) {
        let input = self.input(params, x, t, c);
        let (out, mlp) = self
            .spec
            .forward_cached(&params[..self.mlp_len], &input)
            .expect("input assembled from a validated layout");
        (
            out,
            EpsCache {
                mlp,
                row: self.embed_row(c),
            },
        )
    }

    /// Accumulates parameter gradients and returns `d loss / d x_t`.
    pub(crate) fn eps_backward_with(
        &self,
        params: &[S],
        cache: &EpsCache<S>,
        grad_out: &[S],
        grad: &mut [S],
    ) -> [S; SAMPLE_DIM] {
        let (g_mlp, g_embed) = grad.split_at_mut(self.mlp_len);
        let g_in = self
            .spec
            .backward(&params[..self.mlp_len], &cache.mlp, grad_out, g_mlp);
        let e = self.arch.cond_embed_dim;
        let offset = SAMPLE_DIM + TIME_EMBED_DIM;
        for j in 0..e {
            g_embed[cache.row * e + j] += g_in[offset + j];
        }
        [g_in[0], g_in[1]]
    }
}

/// Predicted noise for one sample `x_t` of shape `[2]`.
pub fn eps_predict<S: Scalar>(
    model: &EpsModel<S>,
    x_t: &DenseTensor<S>,
    t: usize,
    c: Condition,
) -> Result<DenseTensor<S>> {
    if x_t.shape() != [SAMPLE_DIM] {
        return Err(LabError::Shape {
            context: "eps_predict sample",
            expected: vec![SAMPLE_DIM],
            actual: x_t.shape().to_vec(),
        });
    }
    model.check_condition(c)?;
    model.check_t(t)?;
    let out = model.eps_raw(x_t.data(), t, c);
    check_finite("eps prediction", &out)?;
    DenseTensor::vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::ScheduleKind;

    fn sched() -> ScheduleSpec {
        ScheduleSpec {
            steps: 100,
            kind: ScheduleKind::Cosine,
        }
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = EpsModel::<f64>::zeros(EpsArch::default(), sched()).unwrap();
        let x = DenseTensor::vector(vec![0.3, 0.7]).unwrap();
        let e = eps_predict(&m, &x, 10, Condition::Class(1)).unwrap();
        assert_eq!(e.data(), &[0.0, 0.0]);
    }

    #[test]
    fn deterministic_and_validated() {
        let mut rng = crate::rng::rng_from_seed(4);
        let m = EpsModel::<f64>::init(EpsArch::default(), sched(), &mut rng).unwrap();
        let x = DenseTensor::vector(vec![0.3, 0.7]).unwrap();
        let a = eps_predict(&m, &x, 10, Condition::Class(2)).unwrap();
        let b = eps_predict(&m, &x, 10, Condition::Class(2)).unwrap();
        assert_eq!(a, b);
        assert!(eps_predict(&m, &x, 10, Condition::Class(3)).is_err());
        assert!(eps_predict(&m, &x, 0, Condition::Null).is_err());
        assert!(eps_predict(&m, &x, 101, Condition::Null).is_err());
        let n = eps_predict(&m, &x, 10, Condition::Null).unwrap();
        assert_ne!(a, n);
    }

    #[test]
    fn embedding_table_has_null_row() {
        let arch = EpsArch::default();
        let m = EpsModel::<f64>::zeros(arch.clone(), sched()).unwrap();
        let r = m.params().range_of(COND_EMBED_NAME).unwrap();
        assert_eq!(r.len(), (arch.num_classes + 1) * arch.cond_embed_dim);
    }

    #[test]
    fn condition_json() {
        assert_eq!(serde_json::to_string(&Condition::Class(2)).unwrap(), "2");
        assert_eq!(serde_json::to_string(&Condition::Null).unwrap(), "null");
        let c: Condition = serde_json::from_str("1").unwrap();
        assert_eq!(c, Condition::Class(1));
    }
}
