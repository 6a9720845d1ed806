use serde::{Deserialize, Serialize};

use crate::diffusion::model::EpsModel;
use crate::error::{LabError, Result};
use crate::preference::pairs::{reverse_pairs, PreferencePair};
use crate::preference::reward::{invert_reward, RewardModel};
use crate::training::dpo::finetune_dpo;
use crate::training::dr::finetune_dr;
use crate::training::{TrainConfig, TrainLog};
use crate::weightalg::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoFamily {
    Dpo,
    Dr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Po,
    Npo,
}

/// Training signal for either family.
#[derive(Debug, Clone, Copy)]
pub enum PreferenceData<'a> {
    Pairs(&'a [PreferencePair]),
    Reward(&'a RewardModel),
}

impl PoFamily {
    /// Provenance label of an offset trained with this family and polarity.
    pub fn method(self, polarity: Polarity) -> &'static str {
        match (self, polarity) {
            (PoFamily::Dpo, Polarity::Po) => "dpo",
            (PoFamily::Dpo, Polarity::Npo) => "dpo-reversed-pairs",
            (PoFamily::Dr, Polarity::Po) => "dr",
            (PoFamily::Dr, Polarity::Npo) => "dr-inverted-reward",
        }
    }
}

/// Fine-tunes `base` toward (`Po`) or against (`Npo`) the preference signal.
/// Negative runs reverse every pair or invert the reward and otherwise use the
/// positive routine unchanged, starting from `base`. Returns the model, its
/// offset from `base`, and the loss log.
pub fn finetune(
    base: &EpsModel<f64>,
    family: PoFamily,
    data: PreferenceData<'_>,
    polarity: Polarity,
    cfg: &TrainConfig,
) -> Result<(EpsModel<f64>, ParamSet<f64>, TrainLog)> {
    match (family, data) {
        (PoFamily::Dpo, PreferenceData::Pairs(pairs)) => match polarity {
            Polarity::Po => finetune_dpo(base, pairs, cfg),
            Polarity::Npo => finetune_dpo(base, &reverse_pairs(pairs), cfg),
        },
        (PoFamily::Dr, PreferenceData::Reward(reward)) => match polarity {
            Polarity::Po => finetune_dr(base, reward, cfg),
            Polarity::Npo => finetune_dr(base, &invert_reward(reward), cfg),
        },
        (PoFamily::Dpo, PreferenceData::Reward(_)) => {
            Err(LabError::config("the dpo family trains on preference pairs"))
        }
        (PoFamily::Dr, PreferenceData::Pairs(_)) => {
            Err(LabError::config("the dr family trains on a reward model"))
        }
    }
}

/// Negative preference run; the returned offset is `delta`.
pub fn train_npo(
    base: &EpsModel<f64>,
    family: PoFamily,
    data: PreferenceData<'_>,
    cfg: &TrainConfig,
) -> Result<(EpsModel<f64>, ParamSet<f64>, TrainLog)> {
    finetune(base, family, data, Polarity::Npo, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::mixture::MixtureLayout;
    use crate::diffusion::model::EpsArch;
    use crate::diffusion::schedule::{ScheduleKind, ScheduleSpec};
    use crate::weightalg::compose_neg;

    fn model() -> EpsModel<f64> {
        let arch = EpsArch {
            hidden: vec![6],
            cond_embed_dim: 2,
            ..EpsArch::default()
        };
        let sched = ScheduleSpec {
            steps: 30,
            kind: ScheduleKind::Linear,
        };
        crate::training::base::init_model(&arch, sched, 0).unwrap()
    }

    fn pairs() -> Vec<PreferencePair> {
        (0..6)
            .map(|i| PreferencePair {
                winner: [i as f64 * 0.3, 1.0],
                loser: [-1.0, i as f64 * 0.2],
                condition: i % 3,
            })
            .collect()
    }

    fn cfg(iters: usize) -> TrainConfig {
        TrainConfig {
            iters,
            lr: 1e-3,
            batch: 4,
            dr_steps: 4,
            dr_truncate: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn negative_dpo_is_dpo_on_reversed_pairs() {
        let m = model();
        let (_, delta, _) = train_npo(&m, PoFamily::Dpo, PreferenceData::Pairs(&pairs()), &cfg(3)).unwrap();
        let (_, direct, _) = finetune_dpo(&m, &reverse_pairs(&pairs()), &cfg(3)).unwrap();
        assert_eq!(delta, direct);
        let (_, eta, _) = finetune(&m, PoFamily::Dpo, PreferenceData::Pairs(&pairs()), Polarity::Po, &cfg(3)).unwrap();
        assert_ne!(eta, delta);
    }

    #[test]
    fn negative_dr_is_dr_on_inverted_reward() {
        let m = model();
        let r = RewardModel::analytic(MixtureLayout::default());
        let (_, delta, _) = train_npo(&m, PoFamily::Dr, PreferenceData::Reward(&r), &cfg(2)).unwrap();
        let (_, direct, _) = finetune_dr(&m, &invert_reward(&r), &cfg(2)).unwrap();
        assert_eq!(delta, direct);
    }

    #[test]
    fn zero_iterations_degenerate_composition() {
        let m = model();
        let (_, delta, log) = train_npo(&m, PoFamily::Dpo, PreferenceData::Pairs(&pairs()), &cfg(0)).unwrap();
        assert!(log.entries.is_empty());
        assert_eq!(delta.norm(), 0.0);
        let eta = m.params().with_values((0..m.params().len()).map(|i| (i as f64).sin()).collect());
        let neg = compose_neg(m.params(), &eta, &delta, 0.4, 0.9).unwrap();
        let want = m.params().axpy(0.4, &eta).unwrap();
        assert!(neg.max_abs_diff(&want).unwrap() == 0.0);
    }

    #[test]
    fn mismatched_family_and_data() {
        let m = model();
        let r = RewardModel::analytic(MixtureLayout::default());
        assert!(finetune(&m, PoFamily::Dpo, PreferenceData::Reward(&r), Polarity::Po, &cfg(1))
            .unwrap_err()
            .is_config());
        assert!(finetune(&m, PoFamily::Dr, PreferenceData::Pairs(&pairs()), Polarity::Npo, &cfg(1))
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn method_labels() {
        assert_eq!(PoFamily::Dpo.method(Polarity::Npo), "dpo-reversed-pairs");
        assert_eq!(PoFamily::Dr.method(Polarity::Npo), "dr-inverted-reward");
        assert_eq!(PoFamily::Dpo.method(Polarity::Po), "dpo");
    }
}
