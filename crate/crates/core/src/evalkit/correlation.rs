use serde::{Deserialize, Serialize};

use super::{same_shape, EvalError, Result};
use crate::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMode {
    Raw,
    /// Divided by the lead-1 correlation.
    #[default]
    LeadOneNormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    /// Pearson correlation per lead; NaN where undefined.
    #[serde(with = "super::nan_null::vec")]
    pub raw: Vec<f64>,
    #[serde(with = "super::nan_null::vec")]
    pub normalized: Vec<f64>,
    /// Leads whose correlation is undefined (zero variance on either side).
    pub undefined: Vec<bool>,
}

impl CorrelationCurve {
    pub fn curve(&self, mode: CorrelationMode) -> &[f64] {
        match mode {
            CorrelationMode::Raw => &self.raw,
            CorrelationMode::LeadOneNormalized => &self.normalized,
        }
    }
}

/// Pearson correlation, `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-sample spatial means of uncertainty and squared error, per lead.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LeadPairs {
    /// `[lead][sample]`
    pub uncertainty: Vec<Vec<f64>>,
    pub error: Vec<Vec<f64>>,
}

impl LeadPairs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one sample of `[lead, H, W]` uncertainty and squared-error maps.
    pub fn add(&mut self, uncertainty: &Tensor, sq_error: &Tensor) -> Result<()> {
        same_shape(uncertainty, sq_error)?;
        if uncertainty.rank() != 3 {
            return Err(EvalError::Rank(uncertainty.shape().to_vec()));
        }
        let leads = uncertainty.shape()[0];
        if self.uncertainty.is_empty() {
            self.uncertainty = vec![Vec::new(); leads];
            self.error = vec![Vec::new(); leads];
        } else if self.uncertainty.len() != leads {
            return Err(EvalError::Rank(uncertainty.shape().to_vec()));
        }
        let plane = uncertainty.len() / leads;
        for l in 0..leads {
            let r = l * plane..(l + 1) * plane;
            self.uncertainty[l].push(uncertainty.data()[r.clone()].iter().sum::<f64>() / plane as f64);
            self.error[l].push(sq_error.data()[r].iter().sum::<f64>() / plane as f64);
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<CorrelationCurve> {
        if self.uncertainty.is_empty() {
            return Err(EvalError::Empty);
        }
        uncertainty_error_correlation(&self.uncertainty, &self.error)
    }
}

/// Pearson correlation across samples at each lead (`[lead][sample]`
/// inputs), plus the curve divided by its lead-1 value.
pub fn uncertainty_error_correlation(uncertainty: &[Vec<f64>], error: &[Vec<f64>]) -> Result<CorrelationCurve> {
    if uncertainty.len() != error.len() || uncertainty.is_empty() {
        return Err(EvalError::Argument("uncertainty and error must cover the same leads".into()));
    }
    let raw: Vec<f64> = uncertainty
        .iter()
        .zip(error)
        .map(|(u, e)| pearson(u, e).unwrap_or(f64::NAN))
        .collect();
    let undefined = raw.iter().map(|r| r.is_nan()).collect();
    let anchor = raw[0];
    let normalized = raw
        .iter()
        .map(|&r| if anchor.is_nan() || anchor == 0.0 { f64::NAN } else { r / anchor })
        .collect();
    Ok(CorrelationCurve {
        raw,
        normalized,
        undefined,
    })
}
