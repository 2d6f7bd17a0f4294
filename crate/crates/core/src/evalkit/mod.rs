//! Forecast verification and uncertainty diagnosis.

mod correlation;
mod cost;
mod csi;
mod reliability;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Tensor;

pub use correlation::{pearson, uncertainty_error_correlation, CorrelationCurve, CorrelationMode, LeadPairs};
pub use cost::{profile, CostProfile, Timing};
pub use csi::{csi, CsiAccumulator, CsiReport, CsiRow, CSI_THRESHOLDS};
pub use reliability::{
    default_levels, normal_quantile, reliability, student_t_cdf, student_t_quantile, Predictive, ReliabilityAccumulator,
    ReliabilityCurve,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction shape {pred:?} does not match truth shape {truth:?}")]
    ShapeMismatch { pred: Vec<usize>, truth: Vec<usize> },
    #[error("expected [lead, H, W] maps, got {0:?}")]
    Rank(Vec<usize>),
    #[error("no samples accumulated")]
    Empty,
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub(crate) fn same_shape(pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.shape().to_vec(),
            truth: truth.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-lead-step values, lead 1 first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadCurve {
    pub values: Vec<f64>,
}

/// Running per-lead sum of squared error over `[lead, H, W]` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MseAccumulator {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl MseAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        same_shape(pred, truth)?;
        if pred.rank() != 3 {
            return Err(EvalError::Rank(pred.shape().to_vec()));
        }
        let leads = pred.shape()[0];
        if self.sums.is_empty() {
            self.sums = vec![0.0; leads];
            self.counts = vec![0; leads];
        } else if self.sums.len() != leads {
            return Err(EvalError::Rank(pred.shape().to_vec()));
        }
        let plane = pred.len() / leads;
        for l in 0..leads {
            let range = l * plane..(l + 1) * plane;
            let s: f64 = pred.data()[range.clone()]
                .iter()
                .zip(&truth.data()[range])
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            self.sums[l] += s;
            self.counts[l] += plane as u64;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<LeadCurve> {
        if self.sums.is_empty() {
            return Err(EvalError::Empty);
        }
        Ok(LeadCurve {
            values: self
                .sums
                .iter()
                .zip(&self.counts)
                .map(|(s, &c)| s / c as f64)
                .collect(),
        })
    }
}

/// Mean squared error per lead step over samples of `[lead, H, W]` maps.
pub fn mse_by_lead(preds: &[Tensor], truths: &[Tensor]) -> Result<LeadCurve> {
    if preds.len() != truths.len() {
        return Err(EvalError::Argument(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut acc = MseAccumulator::new();
    for (p, t) in preds.iter().zip(truths) {
        acc.add(p, t)?;
    }
    acc.finish()
}

/// Serializes NaN as `null` and back, for undefined metric values.
pub(crate) mod nan_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() { None } else { Some(*v) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter()
                .map(|x| if x.is_nan() { None } else { Some(*x) })
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?
                .into_iter()
                .map(|x| x.unwrap_or(f64::NAN))
                .collect())
        }
    }
}
