mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stormcast::evidential::{self, LambdaSchedule, NigParamMap, SOFTPLUS_FLOOR};
use stormcast::model::Adam;
use stormcast::{Tape, Tensor};

fn single(g: f64, u: f64, a: f64, b: f64) -> NigParamMap<f64> {
    let t = |v| Tensor::full(&[1], v);
    NigParamMap {
        gamma: t(g),
        upsilon: t(u),
        alpha: t(a),
        beta: t(b),
    }
}

#[test]
fn nll_matches_high_precision_fixture() {
    let rows = common::read_csv("student_t_nll.csv");
    assert_eq!(rows.len(), 10_000);
    let mut worst: f64 = 0.0;
    for r in &rows {
        let p = single(r[1], r[2], r[3], r[4]);
        let got = evidential::nll_value(&p, &Tensor::full(&[1], r[0])).unwrap().item();
        worst = worst.max((got - r[5]).abs());
    }
    assert!(worst < 1e-8, "max abs error {worst}");
}

#[test]
fn nll_matches_independent_form_and_density_normalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let (g, u) = (rng.random_range(-1.0..1.0), 10f64.powf(rng.random_range(-2.0..2.0)));
        let a = 1.0 + 10f64.powf(rng.random_range(-1.0..2.0));
        let b = 10f64.powf(rng.random_range(-2.0..1.0));
        let y = rng.random_range(-1.5..1.5);
        let p = single(g, u, a, b);
        let got = evidential::nll_value(&p, &Tensor::full(&[1], y)).unwrap().item();
        assert!((got - common::nig_nll_oracle(y, g, u, a, b)).abs() < 1e-9);
        let (loc, s2, dof) = p.student_t();
        let mass = common::integrate_student_t(loc.item(), s2.item(), dof.item(), 20_000);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass} at dof {}", dof.item());
    }
}

#[test]
fn reference_value_and_location_minimum() {
    let nll = |g: f64| {
        evidential::nll_value(&single(g, 1.0, 1.5, 1.0), &Tensor::full(&[1], 0.0))
            .unwrap()
            .item()
    };
    assert!((nll(0.0) - 1.144_730).abs() < 1e-6);
    for g in [-0.3, -1e-3, 1e-3, 0.7] {
        assert!(nll(g) > nll(0.0));
    }
}

#[test]
fn gaussian_limit() {
    let sigma2 = 0.04;
    let big = 1e6;
    for (y, g) in [(0.3, 0.1), (0.0, 0.0), (0.5, 0.8)] {
        let p = single(g, big, big, big * sigma2);
        let got = evidential::nll_value(&p, &Tensor::full(&[1], y)).unwrap().item();
        let gauss = 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() + (y - g) * (y - g) / (2.0 * sigma2);
        assert!((got - gauss).abs() < 1e-3, "{got} vs {gauss}");
    }
}

#[test]
fn nll_gradient_wrt_raw_outputs() {
    let worst = common::raw_gradient_worst(32, 100, 1e-5, 0.0);
    assert!(worst < 1e-4, "worst relative error {worst}");
    let worst = common::raw_gradient_worst(34, 50, 1e-5, 0.1);
    assert!(worst < 1e-4, "worst relative error with regularizer {worst}");
}

#[test]
fn decomposition_identities_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let raw = Tensor::from_fn(&[4, 12, 8, 8], |_| rng.random_range(-6.0..6.0));
    let p = evidential::constrain_values(&raw).unwrap();
    let u = evidential::decompose(&p).unwrap();
    for i in 0..p.gamma.len() {
        let (up, a, b) = (p.upsilon.data()[i], p.alpha.data()[i], p.beta.data()[i]);
        let (al, ep) = (u.aleatoric.data()[i], u.epistemic.data()[i]);
        assert!(al > 0.0 && ep > 0.0);
        assert!((al * (a - 1.0) - b).abs() <= 1e-12 * b.max(1.0));
        assert!((ep * up - al).abs() <= 1e-12 * al.max(1.0));
        if up >= 1.0 {
            assert!(ep <= al);
        }
    }
}

#[test]
fn extreme_raw_values_stay_in_domain() {
    let raw = Tensor::from_fn(&[4, 4], |i| [-1e3, -50.0, 0.0, 800.0][i % 4]);
    let p = evidential::constrain_values(&raw).unwrap();
    p.validate().unwrap();
    assert!(p.alpha.data().iter().all(|&a| a >= 1.0 + SOFTPLUS_FLOOR));
    evidential::decompose(&p).unwrap();
}

proptest! {
    #[test]
    fn regularizer_increasing_in_evidence(
        err in 1e-3f64..2.0,
        u in 1e-3f64..50.0,
        a in 1.001f64..50.0,
        du in 1e-3f64..5.0,
        da in 1e-3f64..5.0,
    ) {
        let y = Tensor::full(&[1], err);
        let reg = |u, a| evidential::evidence_regularizer_value(&single(0.0, u, a, 1.0), &y).unwrap().item();
        let base = reg(u, a);
        prop_assert!(reg(u + du, a) > base);
        prop_assert!(reg(u, a + da) > base);
    }
}

/// Fits one shared set of NIG parameters to scalar Gaussian samples.
fn fit_scalar(lambda: f64, seed: u64) -> (f64, NigParamMap<f64>) {
    let (mu, sigma) = (0.4, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2000;
    let y = Tensor::from_fn(&[n], |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        mu + sigma * z
    });
    let ones = Tensor::ones(&[n, 1]);
    let mut params = stormcast::model::Params::new();
    params.insert("raw".into(), Tensor::new(vec![1, 4], vec![0.0, 30.0, 1.0, 0.0]).unwrap());
    let mut opt = Adam::new(0.05);
    let schedule = LambdaSchedule::constant(lambda);
    for step in 0..3000 {
        let mut tape = Tape::new();
        let w = tape.param(params["raw"].clone());
        let x = tape.constant(ones.clone());
        let tiled = tape.linear(x, w).unwrap();
        let raw = tape.permute(tiled, &[1, 0]).unwrap();
        let p = evidential::constrain(&mut tape, raw).unwrap();
        let yv = tape.constant(y.clone());
        let (loss, _) = evidential::total_loss(&mut tape, &p, yv, &schedule, step).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads = [("raw".to_string(), g.get(w).unwrap().clone())].into_iter().collect();
        opt.step(&mut params, &grads);
    }
    let raw = Tensor::new(vec![4, 1], params["raw"].data().to_vec()).unwrap();
    let var = y.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
    (var, evidential::constrain_values(&raw).unwrap())
}

#[test]
fn sanity_fit_recovers_mean_and_variance() {
    // Without the regularizer υ stays at its large initial value and
    // β/(α−1) carries the whole variance.
    let (var, p) = fit_scalar(0.0, 34);
    let field = evidential::decompose(&p).unwrap();
    assert!((field.prediction.item() - 0.4).abs() < 0.04, "γ = {}", field.prediction.item());
    assert!((field.aleatoric.item() - var).abs() < 0.1 * var, "β/(α−1) = {}", field.aleatoric.item());
}

#[test]
fn sanity_fit_with_regularizer_matches_marginal_variance() {
    // The regularizer shrinks υ, moving variance into the (1 + 1/υ) factor;
    // the Student-t marginal variance β(1+υ)/(υ(α−1)) still matches.
    let (var, p) = fit_scalar(0.01, 35);
    let field = evidential::decompose(&p).unwrap();
    let marginal = field.aleatoric.item() + field.epistemic.item();
    assert!((field.prediction.item() - 0.4).abs() < 0.04);
    assert!((marginal - var).abs() < 0.1 * var, "marginal variance {marginal}");
}
