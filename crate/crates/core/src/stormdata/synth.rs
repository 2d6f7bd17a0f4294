use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, FrameSequence, Result, DEFAULT_STEP_MINUTES};
use crate::Tensor;

/// Parameters of the advecting-blob storm generator. Ranges are inclusive
/// `[low, high]` pairs sampled uniformly per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticStormConfig {
    pub n_events: usize,
    /// Frames per event.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub cells_per_event: (usize, usize),
    /// Advection speed in pixels per step; direction is uniform.
    pub speed: (f64, f64),
    /// Per-step intensity multiplier.
    pub growth: (f64, f64),
    /// Blob standard deviation in pixels.
    pub sigma: (f64, f64),
    /// Additive noise is uniform on `[0, noise]`.
    pub noise: f64,
    pub step_minutes: f64,
    pub seed: u64,
}

impl Default for SyntheticStormConfig {
    fn default() -> Self {
        SyntheticStormConfig {
            n_events: 40,
            frames: 37,
            height: 32,
            width: 32,
            cells_per_event: (1, 3),
            speed: (0.5, 1.5),
            growth: (0.97, 1.03),
            sigma: (2.0, 4.0),
            noise: 0.02,
            step_minutes: DEFAULT_STEP_MINUTES,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min) {
        return Err(DataError::Config(format!("{name} range [{lo}, {hi}] is invalid")));
    }
    Ok(())
}

impl SyntheticStormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 || self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(DataError::Config("event count and extents must be positive".into()));
        }
        let (c0, c1) = self.cells_per_event;
        if c0 == 0 || c0 > c1 {
            return Err(DataError::Config(format!("cells_per_event [{c0}, {c1}] is invalid")));
        }
        check_range("speed", self.speed, 0.0)?;
        check_range("growth", self.growth, f64::MIN_POSITIVE)?;
        check_range("sigma", self.sigma, 0.5)?;
        if !(0.0..1.0).contains(&self.noise) {
            return Err(DataError::Config(format!("noise must lie in [0, 1), got {}", self.noise)));
        }
        if !(self.step_minutes > 0.0) {
            return Err(DataError::Config("step_minutes must be positive".into()));
        }
        Ok(())
    }

    /// Largest relative change of the noise-free mass between frames.
    pub fn growth_bound(&self) -> f64 {
        (self.growth.1 - 1.0).max(1.0 - self.growth.0).max(0.0)
    }
}

/// One Gaussian intensity cell. Positions are in pixels, `x` along width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub growth: f64,
}

fn wrap(d: f64, extent: f64) -> f64 {
    d - extent * (d / extent).round()
}

/// Renders blobs advected on a periodic domain, rescaled so the peak stays
/// at most `1 − noise`, plus uniform noise on `[0, noise]`.
pub fn render_event(
    blobs: &[Blob],
    frames: usize,
    height: usize,
    width: usize,
    noise: f64,
    step_minutes: f64,
    rng: &mut ChaCha8Rng,
) -> FrameSequence {
    let (hf, wf) = (height as f64, width as f64);
    let mut data = vec![0.0; frames * height * width];
    for (t, frame) in data.chunks_mut(height * width).enumerate() {
        let tf = t as f64;
        for b in blobs {
            let (cx, cy) = (b.x + b.vx * tf, b.y + b.vy * tf);
            let amp = b.amplitude * b.growth.powi(t as i32);
            let k = -0.5 / (b.sigma * b.sigma);
            for i in 0..height {
                let dy = wrap(i as f64 - cy, hf);
                for j in 0..width {
                    let dx = wrap(j as f64 - cx, wf);
                    frame[i * width + j] += amp * (k * (dx * dx + dy * dy)).exp();
                }
            }
        }
    }
    let peak = data.iter().cloned().fold(0.0, f64::max);
    let ceiling = 1.0 - noise;
    if peak > ceiling {
        let s = ceiling / peak;
        data.iter_mut().for_each(|v| *v *= s);
    }
    if noise > 0.0 {
        for v in data.iter_mut() {
            *v += rng.random_range(0.0..=noise);
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    FrameSequence {
        frames: Tensor::new(vec![frames, height, width], data).expect("consistent extents"),
        step_minutes,
    }
}

fn event_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn sample_blobs(cfg: &SyntheticStormConfig, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let n = rng.random_range(cfg.cells_per_event.0..=cfg.cells_per_event.1);
    (0..n)
        .map(|_| {
            let speed = rng.random_range(cfg.speed.0..=cfg.speed.1);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            Blob {
                x: rng.random_range(0.0..cfg.width as f64),
                y: rng.random_range(0.0..cfg.height as f64),
                vx: speed * dir.cos(),
                vy: speed * dir.sin(),
                amplitude: rng.random_range(0.4..=1.0),
                sigma: rng.random_range(cfg.sigma.0..=cfg.sigma.1),
                growth: rng.random_range(cfg.growth.0..=cfg.growth.1),
            }
        })
        .collect()
}

/// Generates `n_events` sequences; event `i` depends only on `(seed, i)`.
pub fn generate(cfg: &SyntheticStormConfig) -> Result<Vec<FrameSequence>> {
    cfg.validate()?;
    Ok((0..cfg.n_events)
        .into_par_iter()
        .map(|i| {
            let mut rng = event_rng(cfg.seed, i);
            let blobs = sample_blobs(cfg, &mut rng);
            render_event(
                &blobs,
                cfg.frames,
                cfg.height,
                cfg.width,
                cfg.noise,
                cfg.step_minutes,
                &mut rng,
            )
        })
        .collect())
}
