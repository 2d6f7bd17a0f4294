use serde::{Deserialize, Serialize};

use super::{same_shape, Result};
use crate::Tensor;

/// Thresholds on the 0–255 scale.
pub const CSI_THRESHOLDS: [f64; 6] = [16.0, 74.0, 133.0, 160.0, 181.0, 219.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiRow {
    pub threshold: f64,
    pub hits: u64,
    pub misses: u64,
    pub false_alarms: u64,
    /// NaN when `defined` is false.
    #[serde(with = "super::nan_null")]
    pub csi: f64,
    pub defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsiReport {
    pub rows: Vec<CsiRow>,
}

impl CsiReport {
    pub fn score(&self, threshold: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.threshold == threshold).map(|r| r.csi)
    }
}

/// Pooled contingency counts over any number of prediction/truth pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiAccumulator {
    thresholds: Vec<f64>,
    counts: Vec<[u64; 3]>,
}

impl CsiAccumulator {
    pub fn new(thresholds: &[f64]) -> Self {
        CsiAccumulator {
            thresholds: thresholds.to_vec(),
            counts: vec![[0; 3]; thresholds.len()],
        }
    }

    /// Both inputs are rescaled by 255 and binarized with `≥ τ`.
    pub fn add(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        same_shape(pred, truth)?;
        for (k, &tau) in self.thresholds.iter().enumerate() {
            let c = &mut self.counts[k];
            for (&p, &t) in pred.data().iter().zip(truth.data()) {
                match (p * 255.0 >= tau, t * 255.0 >= tau) {
                    (true, true) => c[0] += 1,
                    (false, true) => c[1] += 1,
                    (true, false) => c[2] += 1,
                    (false, false) => {}
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CsiAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for i in 0..3 {
                a[i] += b[i];
            }
        }
    }

    pub fn finish(&self) -> CsiReport {
        let rows = self
            .thresholds
            .iter()
            .zip(&self.counts)
            .map(|(&threshold, &[hits, misses, false_alarms])| {
                let den = hits + misses + false_alarms;
                CsiRow {
                    threshold,
                    hits,
                    misses,
                    false_alarms,
                    csi: if den > 0 { hits as f64 / den as f64 } else { f64::NAN },
                    defined: den > 0,
                }
            })
            .collect();
        CsiReport { rows }
    }
}

/// Critical success index of one pair (any shape) at each threshold.
pub fn csi(pred: &Tensor, truth: &Tensor, thresholds: &[f64]) -> Result<CsiReport> {
    let mut acc = CsiAccumulator::new(thresholds);
    acc.add(pred, truth)?;
    Ok(acc.finish())
}
