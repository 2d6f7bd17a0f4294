//! Dense tensors, reverse-mode differentiation, special functions and
//! forward-pass FLOP accounting.
//!
//! Everything here is generic over [`Scalar`] (implemented for `f32` and
//! `f64`). The rest of the crate runs on `f64`; see the aliases at the crate
//! root.

mod flops;
pub mod kernels;
pub mod special;
mod tape;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use flops::{FlopCounter, FlopKind};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Floating-point element type usable by tensors and the tape.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: argument {value} outside the supported domain")]
    Domain { op: &'static str, value: f64 },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("graph error: {0}")]
    Graph(String),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NumericsError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NumericsError>;
