use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erf;

use super::{same_shape, EvalError, Result};
use crate::Tensor;

/// Nominal levels `0.05, 0.10, …, 0.95`.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Per-pixel predictive distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictive {
    Gaussian { mean: Tensor, variance: Tensor },
    /// Location, squared scale and degrees of freedom.
    StudentT { loc: Tensor, scale2: Tensor, dof: Tensor },
}

impl Predictive {
    fn center(&self) -> &Tensor {
        match self {
            Predictive::Gaussian { mean, .. } => mean,
            Predictive::StudentT { loc, .. } => loc,
        }
    }

    /// Probability mass of the smallest central interval containing `y`,
    /// or `None` for a zero-width distribution.
    fn central_mass(&self, i: usize, y: f64) -> Option<f64> {
        match self {
            Predictive::Gaussian { mean, variance } => {
                let v = variance.data()[i];
                if v == 0.0 {
                    return None;
                }
                let z = (y - mean.data()[i]).abs() / v.sqrt();
                Some(erf(z / std::f64::consts::SQRT_2))
            }
            Predictive::StudentT { loc, scale2, dof } => {
                let s2 = scale2.data()[i];
                if s2 == 0.0 {
                    return None;
                }
                let t = (y - loc.data()[i]).abs() / s2.sqrt();
                Some(2.0 * student_t_cdf(t, dof.data()[i]) - 1.0)
            }
        }
    }
}

/// Observed coverage of central intervals at each nominal level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub levels: Vec<f64>,
    pub observed: Vec<f64>,
    /// Zero-width pixels, covered only when truth equals the centre exactly.
    pub degenerate: u64,
    pub count: u64,
}

impl ReliabilityCurve {
    pub fn max_deviation(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.observed)
            .map(|(l, o)| (l - o).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityAccumulator {
    levels: Vec<f64>,
    covered: Vec<u64>,
    degenerate: u64,
    count: u64,
}

impl ReliabilityAccumulator {
    pub fn new(levels: &[f64]) -> Self {
        ReliabilityAccumulator {
            levels: levels.to_vec(),
            covered: vec![0; levels.len()],
            degenerate: 0,
            count: 0,
        }
    }

    /// `y` lies in the central `c`-interval iff the central mass reaching
    /// `|y − centre|` is at most `c`, i.e. iff `|y − centre|` is at most the
    /// `(1 + c)/2` quantile offset.
    pub fn add(&mut self, pred: &Predictive, truth: &Tensor) -> Result<()> {
        same_shape(pred.center(), truth)?;
        for (i, &y) in truth.data().iter().enumerate() {
            self.count += 1;
            match pred.central_mass(i, y) {
                None => {
                    self.degenerate += 1;
                    if y == pred.center().data()[i] {
                        self.covered.iter_mut().for_each(|c| *c += 1);
                    }
                }
                Some(mass) => {
                    for (c, &level) in self.covered.iter_mut().zip(&self.levels) {
                        if mass <= level {
                            *c += 1;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<ReliabilityCurve> {
        if self.count == 0 {
            return Err(EvalError::Empty);
        }
        Ok(ReliabilityCurve {
            levels: self.levels.clone(),
            observed: self.covered.iter().map(|&c| c as f64 / self.count as f64).collect(),
            degenerate: self.degenerate,
            count: self.count,
        })
    }
}

pub fn reliability(pred: &Predictive, truth: &Tensor, levels: &[f64]) -> Result<ReliabilityCurve> {
    let mut acc = ReliabilityAccumulator::new(levels);
    acc.add(pred, truth)?;
    acc.finish()
}

/// Standard Student-t CDF via the regularized incomplete beta function.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(0.5 * dof, 0.5, dof / (dof + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn student_t_pdf(t: f64, dof: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    (ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * std::f64::consts::PI).ln()
        - 0.5 * (dof + 1.0) * (t * t / dof).ln_1p())
    .exp()
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard Student-t quantile: safeguarded Newton iteration on the CDF,
/// started from the normal quantile.
pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, dof);
    }
    let mut lo = 0.0;
    let mut hi = normal_quantile(p).max(1.0);
    while student_t_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }
    // tail form avoids cancellation near p = 1
    let upper = 1.0 - p;
    let f = |t: f64| 0.5 * beta_reg(0.5 * dof, 0.5, dof / (dof + t * t)) - upper;
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let ft = f(t);
        if ft > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        // f decreases with slope −pdf
        let step = ft / student_t_pdf(t, dof);
        let next = t + step;
        let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 1e-15 * next.abs().max(1.0) || hi - lo <= 1e-15 * hi.max(1.0) {
            return next;
        }
        t = next;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_and_normal_limits() {
        // dof 1 is Cauchy: quantile = tan(π(p − ½))
        for p in [0.6, 0.75, 0.9, 0.975] {
            let want = (std::f64::consts::PI * (p - 0.5)).tan();
            assert!((student_t_quantile(p, 1.0) - want).abs() < 1e-10);
        }
        assert!((student_t_quantile(0.975, 1e7) - normal_quantile(0.975)).abs() < 1e-5);
        assert_eq!(student_t_quantile(0.5, 3.0), 0.0);
    }
}
