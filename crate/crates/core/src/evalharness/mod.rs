//! Paired-seed comparisons of guided samplers and grid sweeps over the
//! negative-branch recipe.

pub mod paired;
pub mod report;
pub mod sweep;

pub use paired::{
    cross_items, cycled_items, metric_name, paired_eval, sample_items, score_items, EvalItem,
    SamplerConfig,
};
pub use report::{sign_test, EvalReport};
pub use sweep::{sweep, sweep_with_threads, SweepAxes, SweepCell, SweepReport, SweepSetup, CSV_HEADER};
