//! Building blocks of the spatiotemporal encoder, each recorded on a tape.
//!
//! Activations are laid out `[T, H, W, features]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Result};
use crate::numerics::Var;
use crate::{Tape, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Which axis of `[T, H, W, ·]` an attention pass runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Time,
    Height,
    Width,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Time, Axis::Height, Axis::Width];

    pub fn index(self) -> usize {
        match self {
            Axis::Time => 0,
            Axis::Height => 1,
            Axis::Width => 2,
        }
    }

    /// Permutation bringing this axis next to the feature axis, the two
    /// remaining axes becoming batch axes.
    fn to_sequence_layout(self) -> [usize; 4] {
        match self {
            Axis::Time => [1, 2, 0, 3],
            Axis::Height => [0, 2, 1, 3],
            Axis::Width => [0, 1, 2, 3],
        }
    }
}

/// Per-cell affine lift of scalar intensity: `x · W_e + b_e`.
pub fn embed(tape: &mut Tape, frames: Var, weight: Var, bias: Var) -> Result<Var> {
    let s = tape.shape(frames).to_vec();
    let x = tape.reshape(frames, &[s[0], s[1], s[2], 1])?;
    let h = tape.linear(x, weight)?;
    Ok(tape.add_bias(h, bias)?)
}

/// Sinusoidal encoding of the temporal index, broadcast over space:
/// channel `2i` is `sin(t / 10000^(2i/d))`, channel `2i+1` the matching cosine.
pub fn positional_encoding(t: usize, h: usize, w: usize, d_model: usize) -> Tensor {
    Tensor::from_fn(&[t, h, w, d_model], |idx| {
        let c = idx % d_model;
        let pos = idx / (h * w * d_model);
        let pair = (c / 2) * 2;
        let angle = pos as f64 / 10000f64.powf(pair as f64 / d_model as f64);
        if c.is_multiple_of(2) {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Scaled dot-product attention along one axis of projected `q, k, v`
/// (`[T, H, W, d_k]`), all other axes batched.
pub fn attend_along(tape: &mut Tape, q: Var, k: Var, v: Var, axis: Axis) -> Result<Var> {
    let d_k = *tape.shape(q).last().unwrap();
    let perm = axis.to_sequence_layout();
    let (q, k, v) = if perm == [0, 1, 2, 3] {
        (q, k, v)
    } else {
        (
            tape.permute(q, &perm)?,
            tape.permute(k, &perm)?,
            tape.permute(v, &perm)?,
        )
    };
    let scores = tape.batched_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = tape.softmax(scores, 3)?;
    let out = tape.batched_matmul(weights, v, false)?;
    if perm == [0, 1, 2, 3] {
        Ok(out)
    } else {
        let inv = crate::numerics::kernels::inverse_permutation(&perm);
        Ok(tape.permute(out, &inv)?)
    }
}

/// Projects `hin` to queries, keys and values and attends along `axis`.
pub fn axis_attention(
    tape: &mut Tape,
    hin: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    axis: Axis,
) -> Result<Var> {
    let q = tape.linear(hin, wq)?;
    let k = tape.linear(hin, wk)?;
    let v = tape.linear(hin, wv)?;
    attend_along(tape, q, k, v, axis)
}

/// Mean of the three axis attentions over shared projections.
pub fn cuboid_attention(tape: &mut Tape, hin: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
    let q = tape.linear(hin, wq)?;
    let k = tape.linear(hin, wk)?;
    let v = tape.linear(hin, wv)?;
    let mut acc: Option<Var> = None;
    for axis in Axis::ALL {
        let a = attend_along(tape, q, k, v, axis)?;
        acc = Some(match acc {
            None => a,
            Some(prev) => tape.add(prev, a)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / 3.0)?)
}

/// Inverted dropout: zero with probability `rate`, rescale survivors.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = tape.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    Ok(tape.mul_const(x, &mask)?)
}

/// Handles to one block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
    pub norm1_gain: Var,
    pub norm1_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub norm2_gain: Var,
    pub norm2_bias: Var,
}

fn norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let y = tape.layer_norm(x, LAYER_NORM_EPS)?;
    let y = tape.mul_gain(y, gain)?;
    Ok(tape.add_bias(y, bias)?)
}

/// `H' = LN(H + A(H))`, `H'' = LN(H' + FFN(H'))` with `A` the cuboid
/// attention followed by an output projection.
pub fn cuboid_block(
    tape: &mut Tape,
    hin: Var,
    p: &BlockVars,
    dropout_rate: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let a = cuboid_attention(tape, hin, p.wq, p.wk, p.wv)?;
    let a = tape.linear(a, p.wo)?;
    let mut a = tape.add_bias(a, p.bo)?;
    if let Some(r) = rng.as_deref_mut() {
        a = dropout(tape, a, dropout_rate, r)?;
    }
    let h1 = tape.add(hin, a)?;
    let h1 = norm(tape, h1, p.norm1_gain, p.norm1_bias)?;

    let f = tape.linear(h1, p.w1)?;
    let f = tape.add_bias(f, p.b1)?;
    let f = tape.gelu(f)?;
    let f = tape.linear(f, p.w2)?;
    let mut f = tape.add_bias(f, p.b2)?;
    if let Some(r) = rng.as_mut() {
        f = dropout(tape, f, dropout_rate, r)?;
    }
    let h2 = tape.add(h1, f)?;
    norm(tape, h2, p.norm2_gain, p.norm2_bias)
}

/// Linear read-out from the last temporal slice. Returns
/// `[out_steps, H, W]` for one channel, `[C, out_steps, H, W]` otherwise.
pub fn decode(tape: &mut Tape, h: Var, weight: Var, bias: Var, cfg: &ModelConfig) -> Result<Var> {
    let s = tape.shape(h).to_vec();
    let (t, hh, ww, d) = (s[0], s[1], s[2], s[3]);
    let last = tape.narrow(h, 0, t - 1, 1)?;
    let last = tape.reshape(last, &[hh, ww, d])?;
    let y = tape.linear(last, weight)?;
    let y = tape.add_bias(y, bias)?;
    let c = cfg.head.channels();
    let out = cfg.out_steps;
    // column index = channel · out_steps + step
    let y = tape.reshape(y, &[hh, ww, c, out])?;
    let y = tape.permute(y, &[2, 3, 0, 1])?;
    if c == 1 {
        Ok(tape.reshape(y, &[out, hh, ww])?)
    } else {
        Ok(y)
    }
}
