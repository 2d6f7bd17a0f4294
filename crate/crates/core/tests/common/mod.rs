#![allow(dead_code)]

use std::path::PathBuf;

use statrs::function::gamma::ln_gamma;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Rows of a numeric CSV fixture with a one-line header.
pub fn read_csv(name: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(fixture(name)).expect("fixture present");
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect()
}

/// NIG marginal NLL written in the `Ω = 2β(1+υ)` form, with an independent
/// log-gamma.
pub fn nig_nll_oracle(y: f64, g: f64, u: f64, a: f64, b: f64) -> f64 {
    let omega = 2.0 * b * (1.0 + u);
    0.5 * (std::f64::consts::PI / u).ln() - a * omega.ln()
        + (a + 0.5) * ((y - g).powi(2) * u + omega).ln()
        + ln_gamma(a)
        - ln_gamma(a + 0.5)
}

/// Location-scale Student-t density.
pub fn student_t_pdf(x: f64, loc: f64, scale2: f64, dof: f64) -> f64 {
    let z = (x - loc).powi(2) / (dof * scale2);
    (ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * std::f64::consts::PI * scale2).ln()
        - 0.5 * (dof + 1.0) * z.ln_1p())
    .exp()
}

/// ∫ pdf over ℝ via `x = loc + s·tan θ` and composite Simpson on (−π/2, π/2).
pub fn integrate_student_t(loc: f64, scale2: f64, dof: f64, n: usize) -> f64 {
    let s = scale2.sqrt();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let h = 2.0 * half_pi / n as f64;
    let f = |theta: f64| {
        if theta.abs() >= half_pi {
            return 0.0;
        }
        let c = theta.cos();
        student_t_pdf(loc + s * theta.tan(), loc, scale2, dof) * s / (c * c)
    };
    let mut acc = f(-half_pi) + f(half_pi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(-half_pi + i as f64 * h);
    }
    acc * h / 3.0
}

/// Tiny end-to-end configuration: 8×8 frames, one block, a handful of events.
pub fn micro_config(variant: stormcast::harness::Variant, out: &std::path::Path) -> stormcast::harness::ExperimentConfig {
    use stormcast::model::{HeadKind, ModelConfig};
    let mut cfg = stormcast::harness::ExperimentConfig {
        variant,
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    cfg.data.synthetic.n_events = 12;
    cfg.data.synthetic.frames = 25;
    cfg.data.synthetic.height = 8;
    cfg.data.synthetic.width = 8;
    cfg.model = ModelConfig {
        d_model: 8,
        n_blocks: 1,
        d_k: 8,
        ffn_width: 16,
        in_steps: 13,
        out_steps: 12,
        frame_h: 8,
        frame_w: 8,
        head: HeadKind::Evidential,
        dropout_rate: 0.1,
    };
    cfg.training.epochs = 2;
    cfg.training.batch_size = 4;
    cfg.training.learning_rate = 3e-3;
    cfg.ensemble.n_members = 3;
    cfg.eval.mc_passes = 4;
    cfg.eval.profile_repeats = 2;
    cfg.eval.profile_warmup = 0;
    cfg
}

fn raw_loss(raw: &stormcast::Tensor, y: &stormcast::Tensor, lambda: f64) -> (f64, stormcast::Tensor) {
    use stormcast::evidential::{self, LambdaSchedule};
    let mut tape = stormcast::Tape::new();
    let r = tape.param(raw.clone());
    let yv = tape.constant(y.clone());
    let p = evidential::constrain(&mut tape, r).unwrap();
    let (loss, vals) = evidential::total_loss(&mut tape, &p, yv, &LambdaSchedule::constant(lambda), 0).unwrap();
    let g = tape.backward(loss).unwrap();
    (vals.total, g.get(r).unwrap().clone())
}

/// Worst relative error between the taped gradient of the total loss with
/// respect to raw head outputs and central differences, over `points`
/// random `[4, 3]` raw blocks.
pub fn raw_gradient_worst(seed: u64, points: usize, h: f64, lambda: f64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let raw = stormcast::Tensor::from_fn(&[4, 3], |_| rng.random_range(-2.0..2.0));
        let y = stormcast::Tensor::from_fn(&[3], |_| rng.random_range(-1.0..1.0));
        let (_, grad) = raw_loss(&raw, &y, lambda);
        for i in 0..raw.len() {
            let mut plus = raw.clone();
            plus.data_mut()[i] += h;
            let mut minus = raw.clone();
            minus.data_mut()[i] -= h;
            let fd = (raw_loss(&plus, &y, lambda).0 - raw_loss(&minus, &y, lambda).0) / (2.0 * h);
            let a = grad.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
        }
    }
    worst
}

pub fn micro_model_config(head: stormcast::model::HeadKind) -> stormcast::model::ModelConfig {
    stormcast::model::ModelConfig {
        d_model: 8,
        n_blocks: 1,
        d_k: 8,
        ffn_width: 16,
        in_steps: 3,
        out_steps: 2,
        frame_h: 4,
        frame_w: 4,
        head,
        dropout_rate: 0.2,
    }
}

fn model_loss(
    model: &stormcast::model::NowcastModel,
    x: &stormcast::Tensor,
    y: &stormcast::Tensor,
) -> (f64, std::collections::BTreeMap<String, stormcast::Tensor>) {
    use stormcast::evidential::{self, LambdaSchedule};
    let mut rec = model.record(x, None, true).unwrap();
    let tape = &mut rec.tape;
    let p = evidential::constrain(tape, rec.raw).unwrap();
    let yv = tape.constant(y.clone());
    let (loss, vals) = evidential::total_loss(tape, &p, yv, &LambdaSchedule::constant(0.1), 0).unwrap();
    let g = tape.backward(loss).unwrap();
    let grads = rec.params.iter().map(|(n, &v)| (n.clone(), g.get(v).unwrap().clone())).collect();
    (vals.total, grads)
}

/// Central-difference check of every parameter of a micro evidential model.
/// Returns the worst relative error and the number of entries checked.
pub fn end_to_end_gradient_worst(seed: u64) -> (f64, usize) {
    use rand::{Rng, SeedableRng};
    use stormcast::model::{HeadKind, NowcastModel};
    let model = NowcastModel::init(micro_model_config(HeadKind::Evidential), seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1);
    let x = stormcast::Tensor::from_fn(&[3, 4, 4], |_| rng.random_range(0.0..1.0));
    let y = stormcast::Tensor::from_fn(&[2, 4, 4], |_| rng.random_range(0.0..1.0));
    let (_, grads) = model_loss(&model, &x, &y);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, g) in &grads {
        for i in 0..g.len() {
            let mut plus = model.clone();
            plus.params.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = model.clone();
            minus.params.get_mut(name).unwrap().data_mut()[i] -= h;
            let fd = (model_loss(&plus, &x, &y).0 - model_loss(&minus, &x, &y).0) / (2.0 * h);
            let a = g.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-7));
            checked += 1;
        }
    }
    (worst, checked)
}
