use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::EvalSection;
use super::io::write_atomic;
use super::{HarnessError, Result};
use crate::baselines::{ensemble_predict, mc_dropout_predict};
use crate::evalkit::{
    self, default_levels, CorrelationCurve, CostProfile, CsiAccumulator, CsiReport, LeadCurve, LeadPairs,
    MseAccumulator, Predictive, ReliabilityAccumulator, ReliabilityCurve, Timing, CSI_THRESHOLDS,
};
use crate::evidential;
use crate::model::{clamp_unit, ModelOutput, NowcastModel};
use crate::numerics::FlopCounter;
use crate::stormdata::NowcastSample;
use crate::Tensor;

/// A trained variant ready for inference.
#[derive(Clone, Debug)]
pub enum Predictor {
    Evidential(NowcastModel),
    Ensemble(Vec<NowcastModel>),
    McDropout { model: NowcastModel, passes: usize, seed: u64 },
}

/// One sample's forecast: point, uncertainty map and predictive distribution.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub point: Tensor,
    /// Epistemic variance (EDL) or sample variance (baselines).
    pub uncertainty: Tensor,
    pub aleatoric: Option<Tensor>,
    pub predictive: Predictive,
    pub flops: FlopCounter,
}

impl Predictor {
    pub fn predict(&self, x: &Tensor) -> Result<Forecast> {
        match self {
            Predictor::Evidential(m) => {
                let (out, flops) = m.forward(x, None)?;
                let ModelOutput::Evidential(nig) = out else {
                    return Err(HarnessError::Config("EDL predictor needs an evidential head".into()));
                };
                let field = evidential::decompose(&nig)?;
                let (loc, scale2, dof) = nig.student_t();
                Ok(Forecast {
                    point: field.prediction,
                    uncertainty: field.epistemic,
                    aleatoric: Some(field.aleatoric),
                    predictive: Predictive::StudentT { loc, scale2, dof },
                    flops,
                })
            }
            Predictor::Ensemble(models) => {
                let out = ensemble_predict(models, x)?;
                Ok(sample_forecast(out))
            }
            Predictor::McDropout { model, passes, seed } => {
                let out = mc_dropout_predict(model, x, *passes, *seed)?;
                Ok(sample_forecast(out))
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Predictor::Evidential(m) | Predictor::McDropout { model: m, .. } => m.parameter_count(),
            Predictor::Ensemble(ms) => ms.iter().map(NowcastModel::parameter_count).sum(),
        }
    }

    pub fn passes(&self) -> usize {
        match self {
            Predictor::Evidential(_) => 1,
            Predictor::Ensemble(ms) => ms.len(),
            Predictor::McDropout { passes, .. } => *passes,
        }
    }
}

fn sample_forecast(out: crate::baselines::BaselineOutput) -> Forecast {
    let uq = out.uq;
    Forecast {
        point: uq.mean.clone(),
        uncertainty: uq.variance.clone(),
        aleatoric: None,
        predictive: Predictive::Gaussian {
            mean: uq.mean,
            variance: uq.variance,
        },
        flops: out.flops,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub n_samples: usize,
    pub test_hash: String,
    pub csi: CsiReport,
    pub mse: LeadCurve,
    pub reliability: ReliabilityCurve,
    pub correlation: CorrelationCurve,
    pub cost: CostProfile,
    /// Mean of the uncertainty map over all test pixels.
    pub mean_uncertainty: f64,
}

/// Error and uncertainty maps at one lead step (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct LeadMaps {
    pub lead: usize,
    /// First test sample's target, clamped forecast and uncertainty.
    pub target: Tensor,
    pub output: Tensor,
    pub uncertainty: Tensor,
    /// Per-pixel root-mean-square error over all test samples.
    pub rmse: Tensor,
}

fn lead_slice(t: &Tensor, lead: usize) -> Tensor {
    let s = t.shape();
    let plane = s[1] * s[2];
    Tensor::new(vec![s[1], s[2]], t.data()[lead * plane..(lead + 1) * plane].to_vec()).expect("lead in range")
}

fn capped<'a>(samples: &'a [NowcastSample], eval: &EvalSection) -> &'a [NowcastSample] {
    if eval.max_test_samples > 0 && samples.len() > eval.max_test_samples {
        &samples[..eval.max_test_samples]
    } else {
        samples
    }
}

/// Runs the metric battery over `samples`.
pub fn evaluate(
    variant: &str,
    predictor: &Predictor,
    samples: &[NowcastSample],
    eval: &EvalSection,
    test_hash: &str,
) -> Result<(EvalReport, Vec<LeadMaps>)> {
    let samples = capped(samples, eval);
    if samples.is_empty() {
        return Err(HarnessError::Config("no test samples to evaluate".into()));
    }
    let forecasts: Vec<Forecast> = samples
        .par_iter()
        .map(|s| predictor.predict(&s.history.frames))
        .collect::<Result<_>>()?;
    score(variant, samples, &forecasts, predictor.passes() as u64, predictor.parameter_count() as u64, eval, test_hash)
}

/// Scores precomputed forecasts, one per sample in order.
pub fn score(
    variant: &str,
    samples: &[NowcastSample],
    forecasts: &[Forecast],
    passes: u64,
    parameter_count: u64,
    eval: &EvalSection,
    test_hash: &str,
) -> Result<(EvalReport, Vec<LeadMaps>)> {
    if samples.is_empty() || samples.len() != forecasts.len() {
        return Err(HarnessError::Config(format!(
            "{} forecasts for {} samples",
            forecasts.len(),
            samples.len()
        )));
    }
    let mut csi = CsiAccumulator::new(&CSI_THRESHOLDS);
    let mut mse = MseAccumulator::new();
    let mut rel = ReliabilityAccumulator::new(&default_levels());
    let mut pairs = LeadPairs::new();
    let mut unc_sum = 0.0;
    let mut unc_count = 0usize;
    let shape = samples[0].target.frames.shape().to_vec();
    let mut sq_sum = Tensor::zeros(&shape);
    for (s, f) in samples.iter().zip(forecasts) {
        let truth = &s.target.frames;
        let point = clamp_unit(&f.point);
        csi.add(&point, truth)?;
        mse.add(&point, truth)?;
        rel.add(&f.predictive, truth)?;
        let sq = point.zip_map(truth, |p, t| (p - t) * (p - t))?;
        pairs.add(&f.uncertainty, &sq)?;
        sq_sum.data_mut().iter_mut().zip(sq.data()).for_each(|(a, b)| *a += b);
        unc_sum += f.uncertainty.data().iter().sum::<f64>();
        unc_count += f.uncertainty.len();
    }
    let n = samples.len() as f64;
    let first = &forecasts[0];
    let maps = eval
        .map_leads
        .iter()
        .map(|&lead| LeadMaps {
            lead,
            target: lead_slice(&samples[0].target.frames, lead - 1),
            output: lead_slice(&clamp_unit(&first.point), lead - 1),
            uncertainty: lead_slice(&first.uncertainty, lead - 1),
            rmse: lead_slice(&sq_sum, lead - 1).map(|v| (v / n).sqrt()),
        })
        .collect();
    let total = first.flops.total();
    let report = EvalReport {
        variant: variant.to_string(),
        n_samples: samples.len(),
        test_hash: test_hash.to_string(),
        csi: csi.finish(),
        mse: mse.finish()?,
        reliability: rel.finish()?,
        correlation: pairs.finish()?,
        cost: CostProfile {
            flops_per_pass: total / passes.max(1),
            passes,
            total_flops: total,
            parameter_count,
        },
        mean_uncertainty: unc_sum / unc_count as f64,
    };
    Ok((report, maps))
}

/// Wall-clock of single-sample inference.
pub fn time_inference(predictor: &Predictor, x: &Tensor, warmup: usize, repeats: usize) -> Result<Timing> {
    // surface errors once before timing
    predictor.predict(x)?;
    let (_, timing) = evalkit::profile(
        || predictor.predict(x).map(|f| f.flops).unwrap_or_default(),
        predictor.passes() as u64,
        predictor.parameter_count() as u64,
        warmup,
        repeats,
    );
    Ok(timing)
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.csv";

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn grid_csv(t: &Tensor) -> String {
    let w = t.shape()[1];
    let mut s = String::new();
    for row in t.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|&v| fmt_f(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes one delimiter-separated table per metric, `summary.json` and the
/// per-lead maps into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport, maps: &[LeadMaps]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let put = |name: &str, text: String| write_atomic(&dir.join(name), text.as_bytes());

    let mut s = String::from("threshold,hits,misses,false_alarms,csi,defined\n");
    for r in &report.csi.rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.threshold, r.hits, r.misses, r.false_alarms, fmt_f(r.csi), r.defined);
    }
    put("csi.csv", s)?;

    let mut s = String::from("lead,minutes,mse\n");
    for (i, v) in report.mse.values.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", i + 1, 5 * (i + 1), fmt_f(*v));
    }
    put("mse_by_lead.csv", s)?;

    let mut s = String::from("nominal,observed\n");
    for (l, o) in report.reliability.levels.iter().zip(&report.reliability.observed) {
        let _ = writeln!(s, "{l},{o}");
    }
    put("reliability.csv", s)?;

    let mut s = String::from("lead,pearson,normalized,undefined\n");
    let c = &report.correlation;
    for i in 0..c.raw.len() {
        let _ = writeln!(s, "{},{},{},{}", i + 1, fmt_f(c.raw[i]), fmt_f(c.normalized[i]), c.undefined[i]);
    }
    put("correlation.csv", s)?;

    let k = &report.cost;
    put(
        "cost.csv",
        format!(
            "flops_per_pass,passes,total_flops,parameter_count\n{},{},{},{}\n",
            k.flops_per_pass, k.passes, k.total_flops, k.parameter_count
        ),
    )?;

    let maps_dir = dir.join("maps");
    for m in maps {
        for (kind, t) in [("target", &m.target), ("output", &m.output), ("rmse", &m.rmse), ("uncertainty", &m.uncertainty)] {
            write_atomic(&maps_dir.join(format!("lead_{:02}_{kind}.csv", m.lead)), grid_csv(t).as_bytes())?;
        }
    }
    let json = serde_json::to_vec_pretty(report).map_err(|e| HarnessError::Config(e.to_string()))?;
    write_atomic(&dir.join(SUMMARY_FILE), &json)?;
    Ok(())
}

pub fn write_timing(dir: &Path, timing: &Timing) -> Result<()> {
    let mut s = String::from("repeat,seconds\n");
    for (i, t) in timing.samples.iter().enumerate() {
        let _ = writeln!(s, "{i},{t}");
    }
    write_atomic(&dir.join(TIMING_FILE), s.as_bytes())?;
    Ok(())
}

pub fn read_timing(dir: &Path) -> Option<Timing> {
    let text = std::fs::read_to_string(dir.join(TIMING_FILE)).ok()?;
    let samples = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1)?.parse().ok())
        .collect();
    Some(Timing::from_samples(samples))
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(SUMMARY_FILE);
    let bytes = std::fs::read(&path).map_err(|e| HarnessError::MissingInput { path, source: e })?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Config(format!("bad report summary: {e}")))
}

/// Reads a grid CSV written by [`write_report`].
pub fn read_grid(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::MissingInput {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    let (h, w) = (rows.len(), rows.first().map_or(0, Vec::len));
    Tensor::new(vec![h, w], rows.concat()).map_err(|e| HarnessError::Config(e.to_string()))
}
