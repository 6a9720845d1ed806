//! Synthetic and learned rewards, preference pairs, and the data
//! perturbations used in ablations.

pub mod bradley_terry;
pub mod pairs;
pub mod reward;

pub use bradley_terry::{pairwise_accuracy, train_bradley_terry, BtObjective};
pub use pairs::{
    make_pairs, perturb_pairs, read_pairs, reverse_pair, reverse_pairs, write_pairs, CondSample,
    Perturbation, PreferencePair,
};
pub use reward::{invert_reward, synthetic_reward, BtNet, RewardKind, RewardModel};
