//! Toy-scale laboratory for negative preference optimization of conditional
//! diffusion models.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); training,
//! preference data and evaluation run in `f64`, exposed through the aliases
//! below.

pub mod diffusion;
pub mod error;
pub mod evalharness;
pub mod guidance;
pub mod numcore;
pub mod pipeline;
pub mod preference;
pub mod rng;
pub mod scalar;
pub mod training;
pub mod weightalg;

pub use error::{LabError, Result};
pub use scalar::Scalar;

pub type Tensor = numcore::DenseTensor<f64>;
pub type Params = weightalg::ParamSet<f64>;
pub type Model = diffusion::EpsModel<f64>;
pub type Schedule = diffusion::NoiseSchedule<f64>;
pub type Decomposition = weightalg::OffsetDecomposition<f64>;

pub type Tensor32 = numcore::DenseTensor<f32>;
pub type Params32 = weightalg::ParamSet<f32>;
pub type Model32 = diffusion::EpsModel<f32>;
