//! Frame sequences, the synthetic storm generator, 13-in/12-out windowing,
//! event-level splits and the `EVST1` raw frame format.

mod evst;
mod manifest;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Tensor;

pub use evst::{export, export_bytes, ingest, ingest_bytes, RawHeader};
pub use manifest::{content_hash, Manifest};
pub use synth::{generate, render_event, Blob, SyntheticStormConfig};

pub const HISTORY_STEPS: usize = 13;
pub const TARGET_STEPS: usize = 12;
pub const DEFAULT_STEP_MINUTES: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data configuration: {0}")]
    Config(String),
    #[error("malformed EVST1 data at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("value {value} at byte {offset} exceeds declared maximum {max}")]
    OutOfRange { offset: usize, value: u16, max: u16 },
    #[error("frame values must lie in [0, 1], found {0}")]
    Normalization(f64),
    #[error("malformed manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// `[T, H, W]` stack of normalized intensity frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Tensor,
    pub step_minutes: f64,
}

impl FrameSequence {
    pub fn new(frames: Tensor, step_minutes: f64) -> Result<Self> {
        if frames.rank() != 3 {
            return Err(DataError::Config(format!(
                "frames must be [T, H, W], got {:?}",
                frames.shape()
            )));
        }
        if let Some(&v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Normalization(v));
        }
        Ok(FrameSequence {
            frames,
            step_minutes,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> FrameSequence {
        let plane = self.height() * self.width();
        let data = self.frames.data()[start * plane..(start + len) * plane].to_vec();
        let frames = Tensor::new(vec![len, self.height(), self.width()], data)
            .expect("slice within bounds");
        FrameSequence {
            frames,
            step_minutes: self.step_minutes,
        }
    }

    /// Sum of all intensities in frame `t`.
    pub fn frame_mass(&self, t: usize) -> f64 {
        let plane = self.height() * self.width();
        self.frames.data()[t * plane..(t + 1) * plane].iter().sum()
    }
}

/// One training/evaluation example: contiguous history and target frames.
#[derive(Clone, Debug, PartialEq)]
pub struct NowcastSample {
    /// Index of the source event.
    pub event: usize,
    /// Position of the first history frame within the event.
    pub start: usize,
    pub history: FrameSequence,
    pub target: FrameSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub history: usize,
    pub target: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            history: HISTORY_STEPS,
            target: TARGET_STEPS,
            stride: TARGET_STEPS,
        }
    }
}

/// Cuts every event into history/target windows. Events shorter than one
/// window are skipped; the second value is how many.
pub fn window(events: &[FrameSequence], spec: &WindowSpec) -> Result<(Vec<NowcastSample>, usize)> {
    window_events(events.iter().enumerate(), spec)
}

/// Like [`window`] for a subset of events, keeping their original indices.
pub fn window_subset(
    events: &[FrameSequence],
    ids: &[usize],
    spec: &WindowSpec,
) -> Result<(Vec<NowcastSample>, usize)> {
    window_events(ids.iter().map(|&i| (i, &events[i])), spec)
}

fn window_events<'a>(
    events: impl Iterator<Item = (usize, &'a FrameSequence)>,
    spec: &WindowSpec,
) -> Result<(Vec<NowcastSample>, usize)> {
    if spec.history == 0 || spec.target == 0 || spec.stride == 0 {
        return Err(DataError::Config("window extents and stride must be positive".into()));
    }
    let span = spec.history + spec.target;
    let mut out = Vec::new();
    let mut skipped = 0;
    for (id, ev) in events {
        if ev.len() < span {
            skipped += 1;
            continue;
        }
        let mut start = 0;
        while start + span <= ev.len() {
            out.push(NowcastSample {
                event: id,
                start,
                history: ev.slice(start, spec.history),
                target: ev.slice(start + spec.history, spec.target),
            });
            start += spec.stride;
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} event(s) shorter than {span} frames");
    }
    Ok((out, skipped))
}

/// Disjoint event-index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 70/15/15 partition of `0..n_events` by event.
pub fn split_events(n_events: usize, seed: u64) -> Split {
    split_events_with(n_events, seed, 0.70, 0.15)
}

pub fn split_events_with(n_events: usize, seed: u64, train: f64, val: f64) -> Split {
    let mut ids: Vec<usize> = (0..n_events).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n_events as f64) * train).round() as usize;
    let n_val = (((n_events as f64) * val).round() as usize).min(n_events - n_train.min(n_events));
    let n_train = n_train.min(n_events);
    let mut s = Split {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    };
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

/// Stacks `[T, H, W]` tensors of the same shape along a new leading axis.
pub fn stack(frames: &[&Tensor]) -> Tensor {
    let first = frames.first().expect("at least one tensor");
    let mut shape = vec![frames.len()];
    shape.extend_from_slice(first.shape());
    let data = frames.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data).expect("uniform shapes")
}
