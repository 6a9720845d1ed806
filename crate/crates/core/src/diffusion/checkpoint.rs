//! Single-document JSON checkpoints shared by models, offsets and reward
//! models. Field order is fixed so equal models serialize to equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::model::{EpsArch, EpsModel, SAMPLE_DIM, TIME_EMBED_DIM};
use crate::diffusion::schedule::ScheduleSpec;
use crate::error::{LabError, Result};
use crate::numcore::mlp::MlpSpec;
use crate::weightalg::ParamSet;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Base,
    Po,
    Npo,
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Content {
    #[default]
    Weights,
    Offset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub role: Role,
    pub method: String,
    pub seed: u64,
    pub iterations: usize,
    #[serde(default)]
    pub content: Content,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mlp_spec: MlpSpec,
    /// `[rows, dim]` of the condition embedding table (`rows = classes + 1`
    /// for noise models; `dim = 0` when the model has no table).
    pub cond_embed_dims: [usize; 2],
    pub schedule: Option<ScheduleSpec>,
    pub params: Vec<f64>,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn from_model(model: &EpsModel<f64>, provenance: Provenance) -> Self {
        let arch = model.arch();
        Self {
            format_version: FORMAT_VERSION,
            mlp_spec: model.mlp_spec().clone(),
            cond_embed_dims: [arch.num_classes + 1, arch.cond_embed_dim],
            schedule: Some(model.schedule().spec()),
            params: model.params().values().to_vec(),
            provenance,
        }
    }

    /// Stores an offset in the layout of `like`.
    pub fn from_offset(like: &EpsModel<f64>, offset: &ParamSet<f64>, provenance: Provenance) -> Result<Self> {
        like.params().ensure_same_manifest(offset)?;
        let mut ck = Self::from_model(like, Provenance {
            content: Content::Offset,
            ..provenance
        });
        ck.params = offset.values().to_vec();
        Ok(ck)
    }

    pub fn arch(&self) -> Result<EpsArch> {
        let dims = &self.mlp_spec.layer_dims;
        let [rows, e] = self.cond_embed_dims;
        if rows < 2 || e == 0 || dims.len() < 2 {
            return Err(LabError::config("checkpoint does not describe a noise model"));
        }
        if dims[0] != SAMPLE_DIM + TIME_EMBED_DIM + e || dims[dims.len() - 1] != SAMPLE_DIM {
            return Err(LabError::config(format!(
                "checkpoint layer dims {dims:?} inconsistent with embedding dim {e}"
            )));
        }
        Ok(EpsArch {
            num_classes: rows - 1,
            cond_embed_dim: e,
            hidden: dims[1..dims.len() - 1].to_vec(),
            activation: self.mlp_spec.activation,
        })
    }

    pub fn to_model(&self) -> Result<EpsModel<f64>> {
        self.check_version()?;
        let arch = self.arch()?;
        let schedule = self
            .schedule
            .ok_or_else(|| LabError::config("noise model checkpoint lacks a schedule"))?;
        let params = ParamSet::new(arch.manifest()?, self.params.clone())?;
        EpsModel::new(arch, schedule, params)
    }

    /// Parameters in the manifest of `like` (for offsets).
    pub fn to_params_like(&self, like: &EpsModel<f64>) -> Result<ParamSet<f64>> {
        self.check_version()?;
        let arch = self.arch()?;
        if &arch != like.arch() {
            return Err(LabError::config("offset architecture does not match the model"));
        }
        ParamSet::new(like.params().manifest().to_vec(), self.params.clone())
    }

    fn check_version(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(LabError::config(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::ScheduleKind;

    fn model() -> EpsModel<f64> {
        let mut rng = crate::rng::rng_from_seed(1);
        let sched = ScheduleSpec {
            steps: 100,
            kind: ScheduleKind::Linear,
        };
        EpsModel::init(EpsArch::default(), sched, &mut rng).unwrap()
    }

    fn prov() -> Provenance {
        Provenance {
            role: Role::Base,
            method: "ddpm".into(),
            seed: 3,
            iterations: 10,
            content: Content::Weights,
        }
    }

    #[test]
    fn round_trip_is_exact_and_canonical() {
        let m = model();
        let ck = Checkpoint::from_model(&m, prov());
        let json = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
        assert_eq!(back.to_json().unwrap(), json);
        let keys = ["format_version", "mlp_spec", "cond_embed_dims", "schedule", "params", "provenance"];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_unknown_fields_and_versions() {
        let m = model();
        let mut v: serde_json::Value = serde_json::to_value(Checkpoint::from_model(&m, prov())).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
        let mut ck = Checkpoint::from_model(&m, prov());
        ck.format_version = 99;
        assert!(ck.to_model().is_err());
        let mut ck = Checkpoint::from_model(&m, prov());
        ck.params.pop();
        assert!(ck.to_model().is_err());
    }

    #[test]
    fn offsets_keep_layout() {
        let m = model();
        let off = m.params().scale(0.5).unwrap();
        let ck = Checkpoint::from_offset(&m, &off, Provenance { role: Role::Po, ..prov() }).unwrap();
        assert_eq!(ck.provenance.content, Content::Offset);
        assert_eq!(ck.to_params_like(&m).unwrap(), off);
    }
}
