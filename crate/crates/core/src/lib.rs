//! Evidential (Normal-Inverse-Gamma) storm nowcasting workbench.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod baselines;
pub mod evalkit;
pub mod evidential;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod stormdata;

pub use numerics::Scalar;

/// `f64` tensor, the element type used throughout the model and harness.
pub type Tensor = numerics::Tensor<f64>;
pub type Tape = numerics::Tape<f64>;
pub type Gradients = numerics::Gradients<f64>;
