//! Normal-Inverse-Gamma evidential regression head.
//!
//! The network emits four raw channels per target value. [`constrain`] maps
//! them to NIG parameters `(γ, υ, α, β)` with `υ, β > 0` and `α > 1`; the
//! loss is the Student-t marginal negative log-likelihood plus an evidence
//! regularizer weighted by a scheduled coefficient λ.

mod loss;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{special, NumericsError, Scalar, Tape, Tensor, Var};

pub use loss::{
    evidence_regularizer, evidence_regularizer_value, nll_loss, nll_value, student_t_nll,
    total_loss, EvidentialLoss,
};
pub use schedule::{LambdaSchedule, ScheduleMode};

/// Lower bound applied to every softplus output in the head.
pub const SOFTPLUS_FLOOR: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidentialError {
    #[error("raw head output must have 4 channels on its first axis, got shape {0:?}")]
    ChannelCount(Vec<usize>),
    #[error("target shape {target:?} does not match parameter shape {params:?}")]
    ShapeMismatch {
        params: Vec<usize>,
        target: Vec<usize>,
    },
    #[error("alpha must exceed 1, found {0}")]
    AlphaDomain(f64),
    #[error("non-finite {what} encountered")]
    NonFinite { what: &'static str },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, EvidentialError>;

/// Constrained NIG parameters, each shaped `[lead_steps, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NigParamMap<S> {
    pub gamma: Tensor<S>,
    pub upsilon: Tensor<S>,
    pub alpha: Tensor<S>,
    pub beta: Tensor<S>,
}

/// The same four parameters as live values on a tape.
#[derive(Clone, Copy, Debug)]
pub struct NigVars {
    pub gamma: Var,
    pub upsilon: Var,
    pub alpha: Var,
    pub beta: Var,
}

impl NigVars {
    pub fn values<S: Scalar>(&self, tape: &Tape<S>) -> NigParamMap<S> {
        NigParamMap {
            gamma: tape.value(self.gamma).clone(),
            upsilon: tape.value(self.upsilon).clone(),
            alpha: tape.value(self.alpha).clone(),
            beta: tape.value(self.beta).clone(),
        }
    }
}

/// Prediction, aleatoric and epistemic maps.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyField<S> {
    pub prediction: Tensor<S>,
    /// `E[σ²] = β / (α − 1)`
    pub aleatoric: Tensor<S>,
    /// `Var[μ] = β / (υ (α − 1))`
    pub epistemic: Tensor<S>,
}

/// Maps raw head output `[4, ...]` to NIG parameters on the tape:
/// `γ = raw₀`, `υ = softplus(raw₁)`, `α = 1 + softplus(raw₂)`,
/// `β = softplus(raw₃)`, softplus outputs floored at [`SOFTPLUS_FLOOR`].
pub fn constrain<S: Scalar>(tape: &mut Tape<S>, raw: Var) -> Result<NigVars> {
    let shape = tape.shape(raw).to_vec();
    if shape.len() < 2 || shape[0] != 4 {
        return Err(EvidentialError::ChannelCount(shape));
    }
    let inner = shape[1..].to_vec();
    let floor = S::lit(SOFTPLUS_FLOOR);
    let channel = |tape: &mut Tape<S>, c: usize| -> Result<Var> {
        let v = tape.narrow(raw, 0, c, 1)?;
        Ok(tape.reshape(v, &inner)?)
    };
    let gamma = channel(tape, 0)?;
    let r1 = channel(tape, 1)?;
    let r2 = channel(tape, 2)?;
    let r3 = channel(tape, 3)?;
    let upsilon = tape.softplus(r1)?;
    let upsilon = tape.clamp_min(upsilon, floor)?;
    let alpha = tape.softplus(r2)?;
    let alpha = tape.clamp_min(alpha, floor)?;
    let alpha = tape.add_scalar(alpha, S::one())?;
    let beta = tape.softplus(r3)?;
    let beta = tape.clamp_min(beta, floor)?;
    Ok(NigVars {
        gamma,
        upsilon,
        alpha,
        beta,
    })
}

/// Untaped form of [`constrain`].
pub fn constrain_values<S: Scalar>(raw: &Tensor<S>) -> Result<NigParamMap<S>> {
    let shape = raw.shape();
    if shape.len() < 2 || shape[0] != 4 {
        return Err(EvidentialError::ChannelCount(shape.to_vec()));
    }
    let inner = shape[1..].to_vec();
    let n = raw.len() / 4;
    let floor = S::lit(SOFTPLUS_FLOOR);
    let chan = |c: usize, f: &dyn Fn(S) -> S| {
        let data = raw.data()[c * n..(c + 1) * n].iter().map(|&v| f(v)).collect();
        Tensor::new(inner.clone(), data).expect("shape preserved")
    };
    Ok(NigParamMap {
        gamma: chan(0, &|v| v),
        upsilon: chan(1, &|v| special::softplus(v).max(floor)),
        alpha: chan(2, &|v| S::one() + special::softplus(v).max(floor)),
        beta: chan(3, &|v| special::softplus(v).max(floor)),
    })
}

impl<S: Scalar> NigParamMap<S> {
    pub fn shape(&self) -> &[usize] {
        self.gamma.shape()
    }

    /// Checks `υ > 0`, `α > 1`, `β > 0` and equal shapes.
    pub fn validate(&self) -> Result<()> {
        for t in [&self.upsilon, &self.alpha, &self.beta] {
            if t.shape() != self.gamma.shape() {
                return Err(EvidentialError::ShapeMismatch {
                    params: self.gamma.shape().to_vec(),
                    target: t.shape().to_vec(),
                });
            }
        }
        if let Some(&a) = self.alpha.data().iter().find(|&&a| !(a > S::one())) {
            return Err(EvidentialError::AlphaDomain(a.to_f64_lossy()));
        }
        let positive = |t: &Tensor<S>| t.data().iter().all(|&v| v > S::zero());
        if !positive(&self.upsilon) || !positive(&self.beta) {
            return Err(EvidentialError::Numerics(NumericsError::Domain {
                op: "nig",
                value: 0.0,
            }));
        }
        Ok(())
    }

    /// Student-t marginal `(location, scale², degrees of freedom)` per element:
    /// `(γ, β(1+υ)/(υα), 2α)`.
    pub fn student_t(&self) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
        let scale2 = Tensor::from_fn(self.shape(), |i| {
            let (u, a, b) = (
                self.upsilon.data()[i],
                self.alpha.data()[i],
                self.beta.data()[i],
            );
            b * (S::one() + u) / (u * a)
        });
        let dof = self.alpha.map(|a| a + a);
        (self.gamma.clone(), scale2, dof)
    }
}

/// Prediction and uncertainty maps from NIG parameters.
pub fn decompose<S: Scalar>(p: &NigParamMap<S>) -> Result<UncertaintyField<S>> {
    if let Some(&a) = p.alpha.data().iter().find(|&&a| !(a > S::one())) {
        return Err(EvidentialError::AlphaDomain(a.to_f64_lossy()));
    }
    let aleatoric = p.beta.zip_map(&p.alpha, |b, a| b / (a - S::one()))?;
    let epistemic = aleatoric.zip_map(&p.upsilon, |al, u| al / u)?;
    Ok(UncertaintyField {
        prediction: p.gamma.clone(),
        aleatoric,
        epistemic,
    })
}

/// Persistable summary of a loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSnapshot {
    pub nll: f64,
    pub reg: f64,
    pub lambda: f64,
    pub total: f64,
}
