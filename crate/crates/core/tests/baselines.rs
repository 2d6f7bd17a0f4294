use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stormcast::baselines::{
    ensemble_predict, load_ensemble, mc_dropout_predict, save_ensemble, BaselineError, EnsembleSpec, SampleUQ,
};
use stormcast::harness::Checkpoint;
use stormcast::model::{HeadKind, ModelConfig, NowcastModel};
use stormcast::Tensor;

fn cfg(rate: f64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_blocks: 1,
        d_k: 8,
        ffn_width: 16,
        in_steps: 13,
        out_steps: 12,
        frame_h: 6,
        frame_w: 6,
        head: HeadKind::Deterministic,
        dropout_rate: rate,
    }
}

fn input(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[13, 6, 6], |_| rng.random_range(0.0..1.0))
}

fn two_pass(members: &[Tensor], i: usize) -> (f64, f64) {
    let n = members.len() as f64;
    let m = members.iter().map(|t| t.data()[i]).sum::<f64>() / n;
    let v = members.iter().map(|t| (t.data()[i] - m).powi(2)).sum::<f64>() / n;
    (m, v)
}

#[test]
fn matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let members: Vec<Tensor> = (0..10)
        .map(|_| Tensor::from_fn(&[12, 8, 8], |_| rng.random_range(0.0..1.0)))
        .collect();
    let uq = SampleUQ::from_members(members.clone()).unwrap();
    for i in 0..uq.mean.len() {
        let (m, v) = two_pass(&members, i);
        assert!((uq.mean.data()[i] - m).abs() < 1e-12);
        assert!((uq.variance.data()[i] - v).abs() < 1e-12);
        assert!(uq.variance.data()[i] >= 0.0);
    }
    let mut reversed = members.clone();
    reversed.reverse();
    let r = SampleUQ::from_members(reversed).unwrap();
    assert_eq!(r.mean, uq.mean);
    assert_eq!(r.variance, uq.variance);
}

#[test]
fn identical_ensemble_has_zero_variance() {
    let m = NowcastModel::init(cfg(0.1), 3).unwrap();
    let out = ensemble_predict(&vec![m.clone(); 4], &input(0)).unwrap();
    assert!(out.uq.variance.data().iter().all(|&v| v == 0.0));
    assert_eq!(&out.uq.mean, m.forward(&input(0), None).unwrap().0.point());
}

#[test]
fn ensemble_errors() {
    let m = NowcastModel::init(cfg(0.1), 3).unwrap();
    assert!(matches!(
        ensemble_predict(std::slice::from_ref(&m), &input(0)),
        Err(BaselineError::TooFewMembers(1))
    ));
    let other = NowcastModel::init(ModelConfig { d_model: 4, ..cfg(0.1) }, 3).unwrap();
    assert!(matches!(
        ensemble_predict(&[m.clone(), other], &input(0)),
        Err(BaselineError::ConfigMismatch(1))
    ));
    let edl = NowcastModel::init(cfg(0.1).with_head(HeadKind::Evidential), 3).unwrap();
    assert!(matches!(ensemble_predict(&[edl.clone(), edl], &input(0)), Err(BaselineError::WrongHead)));
}

#[test]
fn mc_dropout_without_dropout_is_degenerate() {
    let m = NowcastModel::init(cfg(0.0), 5).unwrap();
    let out = mc_dropout_predict(&m, &input(1), 10, 7).unwrap();
    assert!(out.uq.variance.data().iter().all(|&v| v == 0.0));
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn mc_dropout_is_reproducible_and_stochastic() {
    let m = NowcastModel::init(cfg(0.2), 5).unwrap();
    let a = mc_dropout_predict(&m, &input(1), 10, 7).unwrap();
    let b = mc_dropout_predict(&m, &input(1), 10, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.warnings.is_empty());
    assert!(a.uq.variance.data().iter().any(|&v| v > 0.0));
    let c = mc_dropout_predict(&m, &input(1), 10, 8).unwrap();
    assert_ne!(a.uq.mean, c.uq.mean);
}

#[test]
fn inference_flops_scale_with_passes() {
    let m = NowcastModel::init(cfg(0.2), 5).unwrap();
    let x = input(2);
    let single_dropout = m
        .forward(&x, Some(&mut stormcast::baselines::pass_rng(0, 0)))
        .unwrap()
        .1
        .total() as f64;
    let mc = mc_dropout_predict(&m, &x, 10, 0).unwrap().flops.total() as f64;
    assert!((mc / single_dropout - 10.0).abs() <= 0.1);
    let single = m.forward(&x, None).unwrap().1.total() as f64;
    let ens = ensemble_predict(&vec![m.clone(); 10], &x).unwrap().flops.total() as f64;
    assert_eq!(ens, 10.0 * single);
    // dropout masks add under 1% to a forward pass
    assert!((mc / single - 10.0).abs() / 10.0 < 0.01);
}

#[test]
fn ensemble_directory_round_trip() {
    let spec = EnsembleSpec::from_base_seed(3, 40);
    let members: Vec<Checkpoint> = spec
        .seeds
        .iter()
        .map(|&s| Checkpoint::new(NowcastModel::init(cfg(0.1), s).unwrap(), 0, s))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    save_ensemble(dir.path(), &members).unwrap();
    let (back_spec, back) = load_ensemble(dir.path()).unwrap();
    assert_eq!(back_spec, spec);
    assert_eq!(back, members);
}
