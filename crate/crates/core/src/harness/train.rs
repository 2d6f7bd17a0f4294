use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainingSection;
use super::io::write_atomic;
use super::{HarnessError, Result};
use crate::evidential::{self, LambdaSchedule};
use crate::model::{Adam, HeadKind, ModelError, NowcastModel};
use crate::numerics::NumericsError;
use crate::stormdata::NowcastSample;
use crate::Tensor;

/// splitmix64 finalizer, used to derive independent seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    Mse,
    Evidential(LambdaSchedule),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation MSE (deterministic head) or NLL (evidential head).
    pub val_metric: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

struct SampleGrad {
    loss: f64,
    grads: BTreeMap<String, Tensor>,
}

fn is_non_finite(e: &ModelError) -> bool {
    matches!(
        e,
        ModelError::Numerics(NumericsError::NonFinite { .. })
            | ModelError::Evidential(evidential::EvidentialError::Numerics(NumericsError::NonFinite { .. }))
            | ModelError::Evidential(evidential::EvidentialError::NonFinite { .. })
    )
}

fn sample_grad(
    model: &NowcastModel,
    sample: &NowcastSample,
    objective: &Objective,
    step: u64,
    dropout: Option<ChaCha8Rng>,
) -> std::result::Result<SampleGrad, ModelError> {
    let mut rng = dropout;
    let mut rec = model.record(&sample.history.frames, rng.as_mut(), true)?;
    let tape = &mut rec.tape;
    let y = tape.constant(sample.target.frames.clone());
    let loss = match objective {
        Objective::Mse => {
            let d = tape.sub(rec.raw, y)?;
            let sq = tape.square(d)?;
            tape.mean(sq)?
        }
        Objective::Evidential(schedule) => {
            let p = evidential::constrain(tape, rec.raw)?;
            evidential::total_loss(tape, &p, y, schedule, step)?.0
        }
    };
    let value = tape.value(loss).item();
    let g = tape.backward(loss)?;
    let grads = rec
        .params
        .iter()
        .map(|(n, &v)| (n.clone(), g.get(v).expect("parameter is a gradient leaf").clone()))
        .collect();
    Ok(SampleGrad { loss: value, grads })
}

/// Mean validation objective: MSE for the deterministic head, NLL for the
/// evidential head. NaN when `samples` is empty.
pub fn validation_metric(model: &NowcastModel, samples: &[NowcastSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let per: Vec<f64> = samples
        .par_iter()
        .map(|s| -> Result<f64> {
            let (out, _) = model.forward(&s.history.frames, None)?;
            let t = &s.target.frames;
            Ok(match model.config.head {
                HeadKind::Deterministic => {
                    let p = out.point();
                    p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
                }
                HeadKind::Evidential => match &out {
                    crate::model::ModelOutput::Evidential(nig) => evidential::nll_value(nig, t)?.mean(),
                    crate::model::ModelOutput::Frames(_) => unreachable!("evidential head"),
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    step: u64,
    epoch: usize,
    loss: Option<f64>,
    error: String,
    batch: Vec<(usize, usize)>,
    param_norms: BTreeMap<&'a str, f64>,
}

fn dump_diagnostic(dir: Option<&Path>, d: &Diagnostic) {
    let Some(dir) = dir else { return };
    match serde_json::to_vec_pretty(d) {
        Ok(bytes) => {
            if let Err(e) = write_atomic(&dir.join("divergence.json"), &bytes) {
                log::error!("could not write divergence diagnostics: {e}");
            }
        }
        Err(e) => log::error!("could not serialize divergence diagnostics: {e}"),
    }
}

/// Mini-batch Adam training with early stopping on the validation metric.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so results do not depend on the thread count.
pub fn train_model(
    mut model: NowcastModel,
    train: &[NowcastSample],
    val: &[NowcastSample],
    objective: &Objective,
    cfg: &TrainingSection,
    epochs: usize,
    seed: u64,
    diag_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut opt = Adam::new(cfg.learning_rate);
    opt.clip_norm = Some(cfg.grad_clip);
    let dropout = model.config.dropout_rate > 0.0;
    let mut history = Vec::with_capacity(epochs);
    let mut best = (f64::INFINITY, model.params.clone(), 0u64);
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, epoch as u64])));
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if cfg.max_batches_per_epoch > 0 {
            batches.truncate(cfg.max_batches_per_epoch);
        }
        let mut epoch_loss = 0.0;
        let mut lambda = 0.0;
        for batch in &batches {
            if let Objective::Evidential(s) = objective {
                lambda = s.lambda(step);
            }
            let results: Vec<std::result::Result<SampleGrad, ModelError>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let rng = dropout.then(|| ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, step, k as u64])));
                    sample_grad(&model, &train[i], objective, step, rng)
                })
                .collect();
            let mut sum: Option<BTreeMap<String, Tensor>> = None;
            let mut loss = 0.0;
            let mut failure = None;
            for r in results {
                match r {
                    Ok(sg) => {
                        loss += sg.loss;
                        match &mut sum {
                            None => sum = Some(sg.grads),
                            Some(acc) => {
                                for (n, g) in sg.grads {
                                    let a = acc.get_mut(&n).expect("same parameter set");
                                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                                }
                            }
                        }
                    }
                    Err(e) if is_non_finite(&e) => {
                        failure.get_or_insert(e.to_string());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let n = batch.len() as f64;
            loss /= n;
            if failure.is_some() || !loss.is_finite() {
                let detail = failure.unwrap_or_else(|| format!("loss = {loss}"));
                dump_diagnostic(
                    diag_dir,
                    &Diagnostic {
                        step,
                        epoch,
                        loss: loss.is_finite().then_some(loss),
                        error: detail.clone(),
                        batch: batch.iter().map(|&i| (train[i].event, train[i].start)).collect(),
                        param_norms: model.params.iter().map(|(k, v)| (k.as_str(), v.norm())).collect(),
                    },
                );
                return Err(HarnessError::Divergence { step, detail });
            }
            let mut grads = sum.expect("non-empty batch");
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v /= n);
            }
            opt.step(&mut model.params, &grads);
            epoch_loss += loss;
            step += 1;
        }
        let train_loss = if batches.is_empty() { f64::NAN } else { epoch_loss / batches.len() as f64 };
        let val_metric = validation_metric(&model, val)?;
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_metric:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
            lambda,
        });
        if val.is_empty() {
            best = (f64::INFINITY, model.params.clone(), step);
            continue;
        }
        if val_metric < best.0 {
            best = (val_metric, model.params.clone(), step);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let final_step = if epochs == 0 { 0 } else { best.2 };
    model.params = best.1;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, final_step, seed),
        history,
        stopped_early,
    })
}

/// `member,epoch,train_loss,val_metric,lambda` rows.
pub fn loss_curve_csv(curves: &[(String, &[EpochRecord])]) -> String {
    let mut s = String::from("member,epoch,train_loss,val_metric,lambda\n");
    for (name, recs) in curves {
        for r in recs.iter() {
            s.push_str(&format!("{name},{},{},{},{}\n", r.epoch, r.train_loss, r.val_metric, r.lambda));
        }
    }
    s
}
