mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stormcast::model::layers::{self, Axis, BlockVars, LAYER_NORM_EPS};
use stormcast::model::{HeadKind, ModelConfig, ModelError, ModelOutput, NowcastModel};
use stormcast::{Tape, Tensor};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn micro(head: HeadKind) -> ModelConfig {
    common::micro_model_config(head)
}

#[test]
fn embed_affine_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn(&[2, 3, 3], |_| rng.random_range(0.0..1.0));
    let w = rand_tensor(&mut rng, &[1, 6]);
    let b = rand_tensor(&mut rng, &[6]);

    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let e = layers::embed(&mut tape, xv, wv, bv).unwrap();
    let out = tape.value(e);
    assert_eq!(out.shape(), &[2, 3, 3, 6]);
    for t in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..6 {
                    let want = x.get(&[t, i, j]) * w.get(&[0, c]) + b.get(&[c]);
                    assert!((out.get(&[t, i, j, c]) - want).abs() < 1e-12);
                }
            }
        }
    }

    let zw = tape.constant(Tensor::zeros(&[1, 6]));
    let zb = tape.constant(Tensor::zeros(&[6]));
    let e0 = layers::embed(&mut tape, xv, zw, zb).unwrap();
    assert!(tape.value(e0).data().iter().all(|&v| v == 0.0));

    let x0 = tape.constant(Tensor::zeros(&[2, 3, 3]));
    let eb = layers::embed(&mut tape, x0, wv, bv).unwrap();
    for (i, &v) in tape.value(eb).data().iter().enumerate() {
        assert_eq!(v, b.data()[i % 6]);
    }
}

#[test]
fn positional_encoding_values() {
    let pe = layers::positional_encoding(3, 2, 2, 8);
    for c in 0..8 {
        let want = if c % 2 == 0 { 0.0 } else { 1.0 };
        assert_eq!(pe.get(&[0, 1, 1, c]), want);
    }
    assert!((pe.get(&[1, 0, 0, 0]) - 0.841_471).abs() < 1e-6);
    assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    // constant over space
    assert_eq!(pe.get(&[2, 0, 1, 3]), pe.get(&[2, 1, 0, 3]));
}

/// Naive per-slice attention along `axis` of `[T,H,W,d]` inputs.
fn attention_oracle(q: &Tensor, k: &Tensor, v: &Tensor, axis: usize) -> Tensor {
    let s = q.shape().to_vec();
    let d = s[3];
    let mut out = Tensor::zeros(&s);
    let len = s[axis];
    for t in 0..s[0] {
        for i in 0..s[1] {
            for j in 0..s[2] {
                let at = |p: usize| {
                    let mut idx = [t, i, j];
                    idx[axis] = p;
                    idx
                };
                let me = [t, i, j];
                let mut scores = vec![0.0; len];
                for (p, sc) in scores.iter_mut().enumerate() {
                    let o = at(p);
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += q.get(&[me[0], me[1], me[2], c]) * k.get(&[o[0], o[1], o[2], c]);
                    }
                    *sc = dot / (d as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..d {
                    let mut acc = 0.0;
                    for (p, w) in e.iter().enumerate() {
                        let o = at(p);
                        acc += w / z * v.get(&[o[0], o[1], o[2], c]);
                    }
                    out.set(&[t, i, j, c], acc);
                }
            }
        }
    }
    out
}

#[test]
fn axis_attention_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = [3, 4, 5, 6];
    let (q, k, v) = (
        rand_tensor(&mut rng, &shape),
        rand_tensor(&mut rng, &shape),
        rand_tensor(&mut rng, &shape),
    );
    for axis in Axis::ALL {
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
        let out = layers::attend_along(&mut tape, qv, kv, vv, axis).unwrap();
        let want = attention_oracle(&q, &k, &v, axis.index());
        for (a, b) in tape.value(out).data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-10, "{axis:?}");
        }
    }
}

#[test]
fn axis_attention_single_key_and_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = rand_tensor(&mut rng, &[1, 3, 3, 4]);
    let (wq, wk, wv) = (
        rand_tensor(&mut rng, &[4, 4]),
        rand_tensor(&mut rng, &[4, 4]),
        rand_tensor(&mut rng, &[4, 4]),
    );
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let (a, b, c) = (tape.constant(wq), tape.constant(wk), tape.constant(wv.clone()));
    let out = layers::axis_attention(&mut tape, hv, a, b, c, Axis::Time).unwrap();
    let vproj = tape.linear(hv, c).unwrap();
    for (x, y) in tape.value(out).data().iter().zip(tape.value(vproj).data()) {
        assert!((x - y).abs() < 1e-14);
    }

    // Identical tokens along W: every query sees uniform weights 1/W, so the
    // output equals the mean of V along W.
    let row = rand_tensor(&mut rng, &[4]);
    let same = Tensor::from_fn(&[2, 2, 5, 4], |i| row.data()[i % 4]);
    let v = rand_tensor(&mut rng, &[2, 2, 5, 4]);
    let mut tape = Tape::new();
    let q = tape.constant(same.clone());
    let k = tape.constant(same);
    let vv = tape.constant(v.clone());
    let out = layers::attend_along(&mut tape, q, k, vv, Axis::Width).unwrap();
    for t in 0..2 {
        for i in 0..2 {
            for c in 0..4 {
                let mean: f64 = (0..5).map(|j| v.get(&[t, i, j, c])).sum::<f64>() / 5.0;
                for j in 0..5 {
                    assert!((tape.value(out).get(&[t, i, j, c]) - mean).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn tri_axis_average_equals_separate_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = rand_tensor(&mut rng, &[3, 4, 4, 8]);
    let ws: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[8, 6])).collect();
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let w: Vec<_> = ws.iter().map(|t| tape.constant(t.clone())).collect();
    let avg = layers::cuboid_attention(&mut tape, hv, w[0], w[1], w[2]).unwrap();
    let parts: Vec<Tensor> = Axis::ALL
        .iter()
        .map(|&a| {
            let o = layers::axis_attention(&mut tape, hv, w[0], w[1], w[2], a).unwrap();
            tape.value(o).clone()
        })
        .collect();
    for (i, &v) in tape.value(avg).data().iter().enumerate() {
        let want = (parts[0].data()[i] + parts[1].data()[i] + parts[2].data()[i]) / 3.0;
        assert!((v - want).abs() < 1e-12);
    }
}

fn block_vars(tape: &mut Tape, rng: &mut ChaCha8Rng, d: usize, dk: usize, f: usize, zero_out: bool) -> BlockVars {
    let mut r = |s: &[usize]| tape.constant(rand_tensor(rng, s));
    let (wq, wk, wv, w1, b1) = (r(&[d, dk]), r(&[d, dk]), r(&[d, dk]), r(&[d, f]), r(&[f]));
    let (wo, bo, w2, b2) = if zero_out {
        (
            tape.constant(Tensor::zeros(&[dk, d])),
            tape.constant(Tensor::zeros(&[d])),
            tape.constant(Tensor::zeros(&[f, d])),
            tape.constant(Tensor::zeros(&[d])),
        )
    } else {
        let mut r = |s: &[usize]| tape.constant(rand_tensor(rng, s));
        (r(&[dk, d]), r(&[d]), r(&[f, d]), r(&[d]))
    };
    BlockVars {
        wq,
        wk,
        wv,
        wo,
        bo,
        norm1_gain: tape.constant(Tensor::ones(&[d])),
        norm1_bias: tape.constant(Tensor::zeros(&[d])),
        w1,
        b1,
        w2,
        b2,
        norm2_gain: tape.constant(Tensor::ones(&[d])),
        norm2_bias: tape.constant(Tensor::zeros(&[d])),
    }
}

fn layer_norm_oracle(x: &Tensor) -> Tensor {
    let d = *x.shape().last().unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let m: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
        for v in row.iter_mut() {
            *v = (*v - m) / (var + LAYER_NORM_EPS).sqrt();
        }
    }
    out
}

#[test]
fn block_zero_residual_and_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = rand_tensor(&mut rng, &[3, 4, 4, 8]);
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let p = block_vars(&mut tape, &mut rng, 8, 8, 16, true);
    let out = layers::cuboid_block(&mut tape, hv, &p, 0.0, None).unwrap();
    let want = layer_norm_oracle(&layer_norm_oracle(&h));
    assert_eq!(tape.value(out).shape(), h.shape());
    for (a, b) in tape.value(out).data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-10);
    }

    let p = block_vars(&mut tape, &mut rng, 8, 8, 16, false);
    let out = layers::cuboid_block(&mut tape, hv, &p, 0.0, None).unwrap();
    for row in tape.value(out).data().chunks(8) {
        let m: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-4 * 1.0 + 1e-8 + LAYER_NORM_EPS);
    }
}

#[test]
fn block_preserves_shape_for_various_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(t, hh, ww) in &[(1, 1, 1), (2, 3, 5), (4, 2, 2)] {
        let mut tape = Tape::new();
        let hv = tape.constant(rand_tensor(&mut rng, &[t, hh, ww, 8]));
        let p = block_vars(&mut tape, &mut rng, 8, 4, 8, false);
        let out = layers::cuboid_block(&mut tape, hv, &p, 0.0, None).unwrap();
        assert_eq!(tape.shape(out), &[t, hh, ww, 8]);
    }
}

#[test]
fn attention_is_equivariant_along_batched_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shape = [3, 4, 5, 4];
    let (q, k, v) = (
        rand_tensor(&mut rng, &shape),
        rand_tensor(&mut rng, &shape),
        rand_tensor(&mut rng, &shape),
    );
    // Reverse the H axis, attend along T, and compare.
    let flip = |t: &Tensor| {
        Tensor::from_fn(t.shape(), |idx| {
            let c = idx % 4;
            let j = (idx / 4) % 5;
            let i = (idx / 20) % 4;
            let tt = idx / 80;
            t.get(&[tt, 3 - i, j, c])
        })
    };
    let run = |q: &Tensor, k: &Tensor, v: &Tensor| {
        let mut tape = Tape::new();
        let (a, b, c) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
        let o = layers::attend_along(&mut tape, a, b, c, Axis::Time).unwrap();
        tape.value(o).clone()
    };
    let base = run(&q, &k, &v);
    let flipped = run(&flip(&q), &flip(&k), &flip(&v));
    assert_eq!(flip(&base), flipped);
}

#[test]
fn decode_shapes_and_clamp() {
    let cfg = ModelConfig {
        frame_h: 5,
        frame_w: 3,
        ..micro(HeadKind::Deterministic)
    };
    let cfg = ModelConfig {
        in_steps: 13,
        out_steps: 12,
        ..cfg
    };
    let x = Tensor::from_fn(&[13, 5, 3], |i| (i % 7) as f64 / 7.0);
    let det = NowcastModel::init(cfg.clone(), 1).unwrap();
    let (out, _) = det.forward(&x, None).unwrap();
    assert_eq!(out.point().shape(), &[12, 5, 3]);
    let clamped = stormcast::model::clamp_unit(out.point());
    assert!(clamped.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let edl = NowcastModel::init(cfg.with_head(HeadKind::Evidential), 1).unwrap();
    let rec = edl.record(&x, None, false).unwrap();
    assert_eq!(rec.tape.shape(rec.raw), &[4, 12, 5, 3]);
    match edl.forward(&x, None).unwrap().0 {
        ModelOutput::Evidential(p) => p.validate().unwrap(),
        ModelOutput::Frames(_) => panic!("expected evidential output"),
    }
}

#[test]
fn forward_determinism_and_dropout() {
    let cfg = micro(HeadKind::Deterministic);
    let m = NowcastModel::init(cfg, 3).unwrap();
    let x = Tensor::from_fn(&[3, 4, 4], |i| ((i * 13) % 17) as f64 / 17.0);
    let (a, fa) = m.forward(&x, None).unwrap();
    let (b, fb) = m.forward(&x, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(fa, fb);
    let (c, fc) = m.forward(&x, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
    let (d, _) = m.forward(&x, Some(&mut ChaCha8Rng::seed_from_u64(2))).unwrap();
    assert_ne!(c, d);
    assert_ne!(a, c);
    // dropout masks cost one elementwise op each
    assert!(fc.total() > fa.total());

    let bad = Tensor::zeros(&[2, 4, 4]);
    assert!(matches!(m.forward(&bad, None), Err(ModelError::InputShape { .. })));
}

#[test]
fn config_validation() {
    let mut cfg = micro(HeadKind::Evidential);
    cfg.d_model = 7;
    assert!(NowcastModel::init(cfg.clone(), 0).is_err());
    cfg.d_model = 8;
    cfg.dropout_rate = 1.0;
    assert!(NowcastModel::init(cfg, 0).is_err());
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let (worst, checked) = common::end_to_end_gradient_worst(11);
    let model = NowcastModel::init(micro(HeadKind::Evidential), 11).unwrap();
    assert_eq!(checked, model.parameter_count());
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = micro(HeadKind::Deterministic);
    let model = NowcastModel::init(cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor::from_fn(&[3, 4, 4], |_| rng.random_range(0.0..1.0));
    let y = Tensor::from_fn(&[2, 4, 4], |_| rng.random_range(0.0..1.0));
    let mut rec = model.record(&x, None, true).unwrap();
    let t = &mut rec.tape;
    let yv = t.constant(y);
    let d = t.sub(rec.raw, yv).unwrap();
    let sq = t.square(d).unwrap();
    let loss = t.mean(sq).unwrap();
    let g = t.backward(loss).unwrap();
    for (name, &v) in &rec.params {
        let norm = g.get(v).unwrap().norm();
        assert!(norm > 0.0, "dead parameter {name}");
    }
}

#[test]
fn flop_count_stable_across_inputs() {
    let cfg = micro(HeadKind::Evidential);
    let m = NowcastModel::init(cfg, 0).unwrap();
    let x1 = Tensor::zeros(&[3, 4, 4]);
    let x2 = Tensor::ones(&[3, 4, 4]);
    let f1 = m.forward(&x1, None).unwrap().1;
    let f2 = m.forward(&x2, None).unwrap().1;
    assert_eq!(f1, f2);
    assert!(f1.total() > 0);
}
