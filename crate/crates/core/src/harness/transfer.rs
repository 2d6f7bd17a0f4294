use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{HarnessError, Result};
use crate::model::{HeadKind, ModelConfig, NowcastModel, HEAD_PREFIX};
use crate::Tensor;

/// Standard deviation of the freshly drawn υ, α, β head columns.
pub const HEAD_INIT_STD: f64 = 0.01;

/// Builds an evidential model from a deterministic one: every backbone array
/// is copied, the γ columns of the head take the deterministic head's weights
/// and bias, and the υ, α, β columns are small random weights with zero bias.
pub fn pretrain_transfer(det: &NowcastModel, edl_config: &ModelConfig, seed: u64) -> Result<NowcastModel> {
    if det.config.head != HeadKind::Deterministic || edl_config.head != HeadKind::Evidential {
        return Err(HarnessError::Transfer(
            "expected a deterministic source and an evidential target".into(),
        ));
    }
    let mut target = NowcastModel::init(edl_config.clone(), seed)?;
    let mismatched: Vec<String> = target
        .params
        .iter()
        .filter(|(n, _)| !n.starts_with(HEAD_PREFIX))
        .filter_map(|(n, t)| match det.params.get(n) {
            Some(s) if s.shape() == t.shape() => None,
            Some(s) => Some(format!("{n}: {:?} vs {:?}", s.shape(), t.shape())),
            None => Some(format!("{n}: missing in source")),
        })
        .collect();
    if !mismatched.is_empty() || !det.config.backbone_compatible(edl_config) {
        let mut list = mismatched;
        if list.is_empty() {
            list.push("model configurations differ".into());
        }
        return Err(HarnessError::Transfer(list.join("; ")));
    }
    for (n, t) in target.params.iter_mut() {
        if !n.starts_with(HEAD_PREFIX) {
            *t = det.params[n].clone();
        }
    }
    let out = edl_config.out_steps;
    let d = edl_config.d_model;
    let cols = 4 * out;
    let src_w = det.param("head.weight")?;
    let src_b = det.param("head.bias")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, HEAD_INIT_STD).expect("positive std");
    // column index = channel · out_steps + step; channel 0 is γ
    let w = Tensor::from_fn(&[d, cols], |idx| {
        let (row, col) = (idx / cols, idx % cols);
        if col < out {
            src_w.data()[row * out + col]
        } else {
            normal.sample(&mut rng)
        }
    });
    let b = Tensor::from_fn(&[cols], |col| if col < out { src_b.data()[col] } else { 0.0 });
    target.params.insert("head.weight".into(), w);
    target.params.insert("head.bias".into(), b);
    Ok(target)
}
