//! End-to-end commands behind the CLI. Each writes its resolved
//! configuration next to its outputs.

use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::compare::{compare, write_comparison, write_timing_table};
use super::config::{ExperimentConfig, Variant};
use super::data::{build_dataset, Dataset};
use super::evaluate::{self, evaluate, EvalReport, Predictor};
use super::figures::write_figures;
use super::io::write_atomic;
use super::train::{derive_seed, loss_curve_csv, train_model, EpochRecord, Objective};
use super::transfer::pretrain_transfer;
use super::{HarnessError, Result};
use crate::baselines::{load_ensemble, save_ensemble, EnsembleSpec};
use crate::evalkit::CorrelationMode;
use crate::model::{HeadKind, NowcastModel};
use crate::stormdata;

pub const DATA_FILE: &str = "data.evst";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const REPORT_DIR: &str = "report";
pub const ENSEMBLE_DIR: &str = "ensemble";
/// Largest raw intensity written by `generate-data`.
pub const EXPORT_MAX: u16 = 255;

pub fn checkpoint_file(variant: Variant) -> String {
    format!("{}.ckpt", variant.name())
}

fn prepare(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir)?;
    cfg.persist(dir)?;
    Ok(dir)
}

/// Writes the dataset as a raw event file plus its manifest.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = prepare(cfg)?;
    let ds = build_dataset(&cfg.data)?;
    stormdata::export(&dir.join(DATA_FILE), &ds.events, EXPORT_MAX)?;
    ds.manifest.write(&dir.join(MANIFEST_FILE))?;
    log::info!("wrote {} events to {}", ds.events.len(), dir.display());
    Ok(ds)
}

/// Result of training one variant.
#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoints: Vec<Checkpoint>,
    pub curves: Vec<(String, Vec<EpochRecord>)>,
}

impl Trained {
    pub fn predictor(&self, cfg: &ExperimentConfig) -> Predictor {
        build_predictor(cfg, self.checkpoints.iter().map(|c| c.model.clone()).collect())
    }
}

/// Trains `cfg.variant` on an already built dataset without writing files.
pub fn train_variant(cfg: &ExperimentConfig, ds: &Dataset, diag_dir: Option<&Path>) -> Result<Trained> {
    let t = &cfg.training;
    let steps = steps_per_epoch(ds.train.len(), t.batch_size, t.max_batches_per_epoch);
    let evidential = Objective::Evidential(t.schedule(steps));
    let det_cfg = cfg.model.with_head(HeadKind::Deterministic);
    let edl_cfg = cfg.model.with_head(HeadKind::Evidential);
    let fit = |model: NowcastModel, obj: &Objective, epochs: usize, seed: u64| {
        train_model(model, &ds.train, &ds.val, obj, t, epochs, seed, diag_dir)
    };
    let mut out = Trained {
        checkpoints: Vec::new(),
        curves: Vec::new(),
    };
    match cfg.variant {
        Variant::Edl => {
            let r = fit(NowcastModel::init(edl_cfg, t.seed)?, &evidential, t.epochs, t.seed)?;
            out.curves.push(("edl".into(), r.history));
            out.checkpoints.push(r.checkpoint);
        }
        Variant::PEdl => {
            let (pre, fine) = t.pedl_epochs();
            let r = fit(NowcastModel::init(det_cfg, t.seed)?, &Objective::Mse, pre, t.seed)?;
            out.curves.push(("pretrain".into(), r.history));
            let seeded = pretrain_transfer(&r.checkpoint.model, &edl_cfg, derive_seed(t.seed, &[4]))?;
            out.checkpoints.push(r.checkpoint);
            let r = fit(seeded, &evidential, fine, derive_seed(t.seed, &[5]))?;
            out.curves.push(("finetune".into(), r.history));
            out.checkpoints.push(r.checkpoint);
        }
        Variant::Ensemble => {
            let spec = EnsembleSpec::from_base_seed(cfg.ensemble.n_members, t.seed);
            for (i, &seed) in spec.seeds.iter().enumerate() {
                let r = fit(NowcastModel::init(det_cfg.clone(), seed)?, &Objective::Mse, t.epochs, seed)?;
                out.curves.push((format!("member_{i:02}"), r.history));
                out.checkpoints.push(r.checkpoint);
            }
        }
        Variant::McDropout => {
            let r = fit(NowcastModel::init(det_cfg, t.seed)?, &Objective::Mse, t.epochs, t.seed)?;
            out.curves.push(("mc-dropout".into(), r.history));
            out.checkpoints.push(r.checkpoint);
        }
    }
    Ok(out)
}

fn steps_per_epoch(n: usize, batch: usize, cap: usize) -> usize {
    let b = n.div_ceil(batch.max(1));
    if cap > 0 {
        b.min(cap)
    } else {
        b
    }
    .max(1)
}

/// Trains the configured variant and writes its checkpoint(s) and loss curves.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Trained> {
    let dir = prepare(cfg)?;
    let ds = build_dataset(&cfg.data)?;
    ds.manifest.write(&dir.join(MANIFEST_FILE))?;
    let trained = train_variant(cfg, &ds, Some(dir))?;
    match cfg.variant {
        Variant::Ensemble => save_ensemble(&dir.join(ENSEMBLE_DIR), &trained.checkpoints)?,
        Variant::PEdl => {
            trained.checkpoints[0].save(&dir.join("pretrain.ckpt"))?;
            trained.checkpoints[1].save(&dir.join(checkpoint_file(Variant::PEdl)))?;
        }
        v => trained.checkpoints[0].save(&dir.join(checkpoint_file(v)))?,
    }
    let curves: Vec<(String, &[EpochRecord])> = trained.curves.iter().map(|(n, h)| (n.clone(), h.as_slice())).collect();
    write_atomic(&dir.join(LOSS_CURVE_FILE), loss_curve_csv(&curves).as_bytes())?;
    Ok(trained)
}

/// Seed of the MC-dropout masks used at evaluation.
pub fn mc_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.training.seed, &[3])
}

/// Wraps trained models as the configured variant's predictor. For P-EDL
/// the last model (the fine-tuned one) is used.
pub fn build_predictor(cfg: &ExperimentConfig, mut models: Vec<NowcastModel>) -> Predictor {
    match cfg.variant {
        Variant::Edl | Variant::PEdl => Predictor::Evidential(models.pop().expect("trained model")),
        Variant::Ensemble => Predictor::Ensemble(models),
        Variant::McDropout => Predictor::McDropout {
            model: models.pop().expect("trained model"),
            passes: cfg.eval.mc_passes,
            seed: mc_seed(cfg),
        },
    }
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    match std::fs::metadata(&path) {
        Ok(_) => Ok(path),
        Err(e) => Err(HarnessError::MissingInput { path, source: e }),
    }
}

/// Loads the checkpoint(s) `run_train` wrote for `cfg.variant`.
pub fn load_predictor(cfg: &ExperimentConfig) -> Result<Predictor> {
    let dir = &cfg.output_dir;
    let models = match cfg.variant {
        Variant::Ensemble => load_ensemble(&existing(dir.join(ENSEMBLE_DIR))?)?
            .1
            .into_iter()
            .map(|c| c.model)
            .collect(),
        v => vec![Checkpoint::load(&dir.join(checkpoint_file(v)))?.model],
    };
    Ok(build_predictor(cfg, models))
}

/// Evaluates trained checkpoints on the test split; writes `report/`.
pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let predictor = load_predictor(cfg)?;
    let report_dir = cfg.output_dir.join(REPORT_DIR);
    std::fs::create_dir_all(&report_dir)?;
    cfg.persist(&report_dir)?;
    let ds = build_dataset(&cfg.data)?;
    let (report, maps) = evaluate(cfg.variant.name(), &predictor, &ds.test, &cfg.eval, ds.test_hash())?;
    evaluate::write_report(&report_dir, &report, &maps)?;
    if cfg.eval.profile_repeats > 0 {
        let timing = evaluate::time_inference(
            &predictor,
            &ds.test[0].history.frames,
            cfg.eval.profile_warmup,
            cfg.eval.profile_repeats,
        )?;
        evaluate::write_timing(&report_dir, &timing)?;
    }
    Ok(report)
}

/// Accepts either a report directory or a run directory containing `report/`.
pub fn resolve_report_dir(p: &Path) -> PathBuf {
    if p.join(evaluate::SUMMARY_FILE).exists() {
        p.to_path_buf()
    } else {
        p.join(REPORT_DIR)
    }
}

fn read_all(dirs: &[PathBuf]) -> Result<Vec<EvalReport>> {
    dirs.iter().map(|d| evaluate::read_report(d)).collect()
}

pub fn run_compare(inputs: &[PathBuf], out: &Path, mode: CorrelationMode) -> Result<()> {
    if inputs.is_empty() {
        return Err(HarnessError::Config("compare needs at least one report directory".into()));
    }
    let dirs: Vec<PathBuf> = inputs.iter().map(|p| resolve_report_dir(p)).collect();
    let reports = read_all(&dirs)?;
    let table = compare(&reports, mode)?;
    std::fs::create_dir_all(out)?;
    write_comparison(out, &table)?;
    let timing: Vec<_> = reports
        .iter()
        .zip(&dirs)
        .filter_map(|(r, d)| Some((r.variant.clone(), evaluate::read_timing(d)?)))
        .collect();
    if !timing.is_empty() {
        write_timing_table(out, &timing)?;
    }
    Ok(())
}

pub fn run_figures(inputs: &[PathBuf], out: &Path, mode: CorrelationMode) -> Result<Vec<String>> {
    if inputs.is_empty() {
        return Err(HarnessError::Config("figures needs at least one report directory".into()));
    }
    let dirs: Vec<PathBuf> = inputs.iter().map(|p| resolve_report_dir(p)).collect();
    let reports = read_all(&dirs)?;
    // overlays only make sense on a shared split
    compare(&reports, mode)?;
    let timings: Vec<_> = dirs.iter().map(|d| evaluate::read_timing(d)).collect();
    let refs: Vec<&Path> = dirs.iter().map(PathBuf::as_path).collect();
    std::fs::create_dir_all(out)?;
    write_figures(out, &reports, &timings, &refs, mode)
}
