use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::numerics::FlopCounter;

/// Deterministic part of an inference cost measurement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostProfile {
    pub flops_per_pass: u64,
    pub passes: u64,
    pub total_flops: u64,
    pub parameter_count: u64,
}

/// Wall-clock samples of one inference, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl Timing {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        Timing {
            samples,
            mean,
            sd: var.sqrt(),
        }
    }
}

/// Runs `infer` for `warmup` untimed and `repeats` timed iterations.
/// `infer` performs one complete inference (all passes) and returns the
/// FLOPs it counted.
pub fn profile(
    mut infer: impl FnMut() -> FlopCounter,
    passes: u64,
    parameter_count: u64,
    warmup: usize,
    repeats: usize,
) -> (CostProfile, Timing) {
    let mut total = 0;
    for _ in 0..warmup {
        total = infer().total();
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let f = infer();
        samples.push(start.elapsed().as_secs_f64());
        total = f.total();
    }
    let passes = passes.max(1);
    (
        CostProfile {
            flops_per_pass: total / passes,
            passes,
            total_flops: total,
            parameter_count,
        },
        Timing::from_samples(samples),
    )
}
