//! Sample-statistics uncertainty from deep ensembles and Monte-Carlo dropout
//! over the deterministic-head model.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::Checkpoint;
use crate::model::{HeadKind, ModelError, NowcastModel};
use crate::numerics::FlopCounter;
use crate::stormdata::Manifest;
use crate::Tensor;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("sample statistics need at least 2 members or passes, got {0}")]
    TooFewMembers(usize),
    #[error("member {0} does not share the first member's configuration")]
    ConfigMismatch(usize),
    #[error("baselines require the deterministic head")]
    WrongHead,
    #[error("member outputs disagree in shape")]
    ShapeMismatch,
    #[error("ensemble directory: {0}")]
    Directory(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Per-pixel mean and population variance over members or passes.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleUQ {
    pub mean: Tensor,
    pub variance: Tensor,
    pub members: Vec<Tensor>,
}

impl SampleUQ {
    /// `mean(m²) − mean(m)²` per element. Each pixel's values are sorted and
    /// offset by their minimum, so the result does not depend on member order
    /// and identical members give exactly zero variance.
    pub fn from_members(members: Vec<Tensor>) -> Result<Self> {
        if members.len() < 2 {
            return Err(BaselineError::TooFewMembers(members.len()));
        }
        let shape = members[0].shape().to_vec();
        if members.iter().any(|m| m.shape() != shape.as_slice()) {
            return Err(BaselineError::ShapeMismatch);
        }
        let n = members.len() as f64;
        let len = members[0].len();
        let mut mean = vec![0.0; len];
        let mut variance = vec![0.0; len];
        let mut vals = vec![0.0; members.len()];
        for i in 0..len {
            for (v, m) in vals.iter_mut().zip(&members) {
                *v = m.data()[i];
            }
            vals.sort_unstable_by(f64::total_cmp);
            let base = vals[0];
            let (mut s, mut s2) = (0.0, 0.0);
            for &v in &vals[1..] {
                let d = v - base;
                s += d;
                s2 += d * d;
            }
            let md = s / n;
            mean[i] = base + md;
            variance[i] = (s2 / n - md * md).max(0.0);
        }
        Ok(SampleUQ {
            mean: Tensor::new(shape.clone(), mean).expect("shape preserved"),
            variance: Tensor::new(shape, variance).expect("shape preserved"),
            members,
        })
    }
}

/// A baseline prediction with the FLOPs it consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutput {
    pub uq: SampleUQ,
    pub flops: FlopCounter,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_members: usize,
    pub seeds: Vec<u64>,
}

impl EnsembleSpec {
    /// `n` members seeded `base, base + 1, …`.
    pub fn from_base_seed(n: usize, base: u64) -> Self {
        EnsembleSpec {
            n_members: n,
            seeds: (0..n as u64).map(|i| base.wrapping_add(i)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members < 2 {
            return Err(BaselineError::TooFewMembers(self.n_members));
        }
        if self.seeds.len() != self.n_members {
            return Err(BaselineError::Directory(format!(
                "{} seeds listed for {} members",
                self.seeds.len(),
                self.n_members
            )));
        }
        Ok(())
    }
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self::from_base_seed(10, 0)
    }
}

fn collect(results: Vec<(Tensor, FlopCounter)>, warnings: Vec<String>) -> Result<BaselineOutput> {
    let mut flops = FlopCounter::new();
    let mut members = Vec::with_capacity(results.len());
    for (out, f) in results {
        flops.merge(&f);
        members.push(out);
    }
    Ok(BaselineOutput {
        uq: SampleUQ::from_members(members)?,
        flops,
        warnings,
    })
}

/// Mean and variance across independently trained members, dropout off.
pub fn ensemble_predict(models: &[NowcastModel], x: &Tensor) -> Result<BaselineOutput> {
    if models.len() < 2 {
        return Err(BaselineError::TooFewMembers(models.len()));
    }
    let cfg = &models[0].config;
    if cfg.head != HeadKind::Deterministic {
        return Err(BaselineError::WrongHead);
    }
    if let Some(i) = models.iter().position(|m| &m.config != cfg) {
        return Err(BaselineError::ConfigMismatch(i));
    }
    let results = models
        .par_iter()
        .map(|m| {
            let (out, f) = m.forward(x, None)?;
            Ok((out.point().clone(), f))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(results, Vec::new())
}

/// Dropout generator for pass `pass` under `seed`.
pub fn pass_rng(seed: u64, pass: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pass as u64);
    rng
}

/// `n_passes` forwards with dropout active; reproducible given `seed`.
pub fn mc_dropout_predict(model: &NowcastModel, x: &Tensor, n_passes: usize, seed: u64) -> Result<BaselineOutput> {
    if n_passes < 2 {
        return Err(BaselineError::TooFewMembers(n_passes));
    }
    if model.config.head != HeadKind::Deterministic {
        return Err(BaselineError::WrongHead);
    }
    let mut warnings = Vec::new();
    if model.config.dropout_rate == 0.0 {
        let msg = format!("dropout_rate is 0: all {n_passes} passes are identical and variance is 0");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let results = (0..n_passes)
        .into_par_iter()
        .map(|p| {
            let mut rng = pass_rng(seed, p);
            let (out, f) = model.forward(x, Some(&mut rng))?;
            Ok((out.point().clone(), f))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(results, warnings)
}

fn member_file(i: usize) -> String {
    format!("member_{i:02}.ckpt")
}

/// Writes one checkpoint per member and a `manifest.txt` listing seeds.
pub fn save_ensemble(dir: &Path, members: &[Checkpoint]) -> std::result::Result<(), crate::harness::HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut m = Manifest::new();
    m.set("n_members", members.len());
    let seeds: Vec<String> = members.iter().map(|c| c.seed.to_string()).collect();
    m.set("seeds", seeds.join(","));
    for (i, c) in members.iter().enumerate() {
        c.save(&dir.join(member_file(i)))?;
        m.set(&format!("member.{i:02}"), member_file(i));
    }
    m.write(&dir.join("manifest.txt"))?;
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> std::result::Result<(EnsembleSpec, Vec<Checkpoint>), crate::harness::HarnessError> {
    let m = Manifest::read(&dir.join("manifest.txt"))?;
    let bad = |d: &str| BaselineError::Directory(d.to_string());
    let n: usize = m
        .get("n_members")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("manifest lacks n_members"))?;
    let seeds = m
        .get("seeds")
        .ok_or_else(|| bad("manifest lacks seeds"))?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad("unparseable seed list"))?;
    let spec = EnsembleSpec { n_members: n, seeds };
    spec.validate()?;
    let members = (0..n)
        .map(|i| Checkpoint::load(&dir.join(member_file(i))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((spec, members))
}
