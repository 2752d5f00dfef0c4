//! Omni-scale prime-kernel planning, bottlenecked multi-scale residual
//! networks, their training loop, and analytic complexity accounting for
//! multi-lead time-series classification.

pub mod analysis;
pub mod data;
pub mod error;
pub mod kernel_plan;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use kernel_plan::{KernelPlan, KernelSet, StagePlan};
pub use scalar::Scalar;
pub use tensor::{Mode, Param, Tensor3};

/// Double-precision tensor, the default element type.
pub type Tensor = Tensor3<f64>;
/// Double-precision model.
pub type Model = model::Model<f64>;
/// Single-precision model.
pub type Model32 = model::Model<f32>;
/// Double-precision layer parameter.
pub type Parameter = Param<f64>;
