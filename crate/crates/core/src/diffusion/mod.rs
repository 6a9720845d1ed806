//! Conditional epsilon-prediction diffusion on a two-dimensional toy domain.

pub mod checkpoint;
pub mod mixture;
pub mod model;
pub mod sampler;
pub mod schedule;

pub use checkpoint::{Checkpoint, Content, Provenance, Role};
pub use mixture::MixtureLayout;
pub use model::{eps_predict, time_embedding, Condition, EpsArch, EpsModel, SAMPLE_DIM, TIME_EMBED_DIM};
pub use sampler::{reverse_sample, sample_conditional, timesteps, SamplerMode, SamplerSpec};
pub use schedule::{add_noise, make_schedule, predict_x0, NoiseSchedule, ScheduleKind, ScheduleSpec};
