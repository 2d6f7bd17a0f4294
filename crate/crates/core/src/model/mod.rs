//! Axis-factorized spatiotemporal transformer producing either a frame
//! forecast or the four raw evidential channels per pixel and lead step.

pub mod layers;
mod optim;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidential::{self, EvidentialError, NigParamMap};
use crate::numerics::{FlopCounter, NumericsError, Var};
use crate::{Tape, Tensor};

pub use layers::{Axis, BlockVars};
pub use optim::Adam;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("expected input of shape {expected:?}, got {got:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Evidential(#[from] EvidentialError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Deterministic,
    Evidential,
}

impl HeadKind {
    pub fn channels(self) -> usize {
        match self {
            HeadKind::Deterministic => 1,
            HeadKind::Evidential => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub d_k: usize,
    pub ffn_width: usize,
    pub in_steps: usize,
    pub out_steps: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub head: HeadKind,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: 32×32 frames, 13 in / 12 out.
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            n_blocks: 2,
            d_k: 16,
            ffn_width: 64,
            in_steps: 13,
            out_steps: 12,
            frame_h: 32,
            frame_w: 32,
            head: HeadKind::Evidential,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_blocks", self.n_blocks),
            ("d_k", self.d_k),
            ("ffn_width", self.ffn_width),
            ("in_steps", self.in_steps),
            ("out_steps", self.out_steps),
            ("frame_h", self.frame_h),
            ("frame_w", self.frame_w),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "d_model must be even for sin/cos pairing, got {}",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn with_head(&self, head: HeadKind) -> Self {
        ModelConfig {
            head,
            ..self.clone()
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_steps, self.frame_h, self.frame_w]
    }

    /// Backbone shapes agree (everything except the head).
    pub fn backbone_compatible(&self, other: &ModelConfig) -> bool {
        self.d_model == other.d_model
            && self.n_blocks == other.n_blocks
            && self.d_k == other.d_k
            && self.ffn_width == other.ffn_width
            && self.in_steps == other.in_steps
            && self.out_steps == other.out_steps
            && self.frame_h == other.frame_h
            && self.frame_w == other.frame_w
    }
}

/// Named parameter arrays, iterated in name order.
pub type Params = BTreeMap<String, Tensor>;

pub const HEAD_PREFIX: &str = "head.";

pub fn block_param(i: usize, name: &str) -> String {
    format!("blocks.{i}.{name}")
}

/// Output of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelOutput {
    /// `[out_steps, H, W]`, unclamped.
    Frames(Tensor),
    Evidential(NigParamMap<f64>),
}

impl ModelOutput {
    /// Point forecast: the frames, or γ for the evidential head.
    pub fn point(&self) -> &Tensor {
        match self {
            ModelOutput::Frames(t) => t,
            ModelOutput::Evidential(p) => &p.gamma,
        }
    }
}

/// A recorded forward pass: tape, parameter handles and raw head output.
pub struct Recorded {
    pub tape: Tape,
    pub params: BTreeMap<String, Var>,
    pub raw: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NowcastModel {
    pub config: ModelConfig,
    pub params: Params,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(&[fan_in, fan_out], |_| normal.sample(rng))
}

impl NowcastModel {
    /// Seeded initialization; identical `(config, seed)` gives identical weights.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut p = Params::new();
        p.insert("embed.weight".into(), xavier(&mut rng, 1, d));
        p.insert("embed.bias".into(), Tensor::zeros(&[d]));
        for i in 0..config.n_blocks {
            let mut put = |n: &str, t: Tensor| p.insert(block_param(i, n), t);
            put("attn.q", xavier(&mut rng, d, config.d_k));
            put("attn.k", xavier(&mut rng, d, config.d_k));
            put("attn.v", xavier(&mut rng, d, config.d_k));
            put("attn.out.weight", xavier(&mut rng, config.d_k, d));
            put("attn.out.bias", Tensor::zeros(&[d]));
            put("norm1.gain", Tensor::ones(&[d]));
            put("norm1.bias", Tensor::zeros(&[d]));
            put("ffn.w1", xavier(&mut rng, d, config.ffn_width));
            put("ffn.b1", Tensor::zeros(&[config.ffn_width]));
            put("ffn.w2", xavier(&mut rng, config.ffn_width, d));
            put("ffn.b2", Tensor::zeros(&[d]));
            put("norm2.gain", Tensor::ones(&[d]));
            put("norm2.bias", Tensor::zeros(&[d]));
        }
        let cols = config.head.channels() * config.out_steps;
        p.insert("head.weight".into(), xavier(&mut rng, d, cols));
        p.insert("head.bias".into(), Tensor::zeros(&[cols]));
        Ok(NowcastModel { config, params: p })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Records a forward pass. Parameters are taped as gradient leaves when
    /// `track_grads`; dropout is active iff `dropout_rng` is given.
    pub fn record(
        &self,
        frames: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
        track_grads: bool,
    ) -> Result<Recorded> {
        let cfg = &self.config;
        let expected = cfg.input_shape().to_vec();
        if frames.shape() != expected.as_slice() {
            return Err(ModelError::InputShape {
                expected,
                got: frames.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            let v = if track_grads {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            vars.insert(name.clone(), v);
        }
        let get = |n: &str| -> Result<Var> {
            vars.get(n)
                .copied()
                .ok_or_else(|| ModelError::MissingParam(n.to_string()))
        };

        let x = tape.constant(frames.clone());
        let h = layers::embed(&mut tape, x, get("embed.weight")?, get("embed.bias")?)?;
        let pe = tape.constant(layers::positional_encoding(
            cfg.in_steps,
            cfg.frame_h,
            cfg.frame_w,
            cfg.d_model,
        ));
        let mut h = tape.add(h, pe)?;
        let mut rng = dropout_rng;
        for i in 0..cfg.n_blocks {
            let b = |n: &str| get(&block_param(i, n));
            let bv = BlockVars {
                wq: b("attn.q")?,
                wk: b("attn.k")?,
                wv: b("attn.v")?,
                wo: b("attn.out.weight")?,
                bo: b("attn.out.bias")?,
                norm1_gain: b("norm1.gain")?,
                norm1_bias: b("norm1.bias")?,
                w1: b("ffn.w1")?,
                b1: b("ffn.b1")?,
                w2: b("ffn.w2")?,
                b2: b("ffn.b2")?,
                norm2_gain: b("norm2.gain")?,
                norm2_bias: b("norm2.bias")?,
            };
            h = layers::cuboid_block(&mut tape, h, &bv, cfg.dropout_rate, rng.as_deref_mut())?;
        }
        let raw = layers::decode(&mut tape, h, get("head.weight")?, get("head.bias")?, cfg)?;
        Ok(Recorded {
            tape,
            params: vars,
            raw,
        })
    }

    /// Inference forward pass; returns the output and the FLOPs it took.
    pub fn forward(
        &self,
        frames: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(ModelOutput, FlopCounter)> {
        let rec = self.record(frames, dropout_rng, false)?;
        let raw = rec.tape.value(rec.raw);
        let out = match self.config.head {
            HeadKind::Deterministic => ModelOutput::Frames(raw.clone()),
            HeadKind::Evidential => ModelOutput::Evidential(evidential::constrain_values(raw)?),
        };
        Ok((out, rec.tape.flops().clone()))
    }

    /// Names of parameters outside the output head.
    pub fn backbone_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys().filter(|n| !n.starts_with(HEAD_PREFIX))
    }
}

/// Clamps a deterministic forecast into `[0, 1]` for evaluation.
pub fn clamp_unit(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}
