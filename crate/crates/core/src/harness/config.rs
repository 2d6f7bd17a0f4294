use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::write_atomic;
use super::{HarnessError, Result};
use crate::evalkit::CorrelationMode;
use crate::evidential::{LambdaSchedule, ScheduleMode};
use crate::model::ModelConfig;
use crate::stormdata::{SyntheticStormConfig, WindowSpec, DEFAULT_STEP_MINUTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Edl,
    PEdl,
    Ensemble,
    McDropout,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Edl, Variant::PEdl, Variant::Ensemble, Variant::McDropout];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Edl => "edl",
            Variant::PEdl => "p-edl",
            Variant::Ensemble => "ensemble",
            Variant::McDropout => "mc-dropout",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown variant `{s}` (edl, p-edl, ensemble, mc-dropout)")))
    }

    pub fn is_evidential(self) -> bool {
        matches!(self, Variant::Edl | Variant::PEdl)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub path: PathBuf,
    #[serde(default = "default_step")]
    pub step_minutes: f64,
}

fn default_step() -> f64 {
    DEFAULT_STEP_MINUTES
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Used unless `ingest` is set.
    #[serde(default)]
    pub synthetic: SyntheticStormConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestSection>,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Total epochs; P-EDL splits them between pretraining and fine-tuning.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lambda_max: f64,
    /// λ ramp length in epochs.
    pub lambda_ramp_epochs: f64,
    pub lambda_mode: ScheduleMode,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    /// Fraction of `epochs` spent fine-tuning in P-EDL.
    pub finetune_fraction: f64,
    /// Caps batches per epoch; 0 means no cap.
    pub max_batches_per_epoch: usize,
    pub grad_clip: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            lambda_max: 0.01,
            lambda_ramp_epochs: 1.0,
            lambda_mode: ScheduleMode::LinearRamp,
            patience: 5,
            finetune_fraction: 0.5,
            max_batches_per_epoch: 0,
            grad_clip: 1.0,
        }
    }
}

impl TrainingSection {
    pub fn schedule(&self, steps_per_epoch: usize) -> LambdaSchedule {
        let ramp = ((self.lambda_ramp_epochs * steps_per_epoch as f64).round() as u64).max(1);
        LambdaSchedule {
            lambda_max: self.lambda_max,
            ramp_steps: ramp,
            mode: self.lambda_mode,
        }
    }

    /// `(pretrain, finetune)` epochs for P-EDL.
    pub fn pedl_epochs(&self) -> (usize, usize) {
        let fine = (self.epochs as f64 * self.finetune_fraction).round() as usize;
        let fine = fine.min(self.epochs);
        (self.epochs - fine, fine)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_members: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { n_members: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mc_passes: usize,
    /// Lead steps (1-based) for error/uncertainty map emission.
    pub map_leads: Vec<usize>,
    pub profile_repeats: usize,
    pub profile_warmup: usize,
    pub correlation: CorrelationMode,
    /// Caps evaluated test samples; 0 means all.
    pub max_test_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            mc_passes: 10,
            map_leads: vec![2, 4, 6, 8],
            profile_repeats: 30,
            profile_warmup: 5,
            correlation: CorrelationMode::LeadOneNormalized,
            max_test_samples: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::Edl,
            output_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            model: ModelConfig::default(),
            training: TrainingSection::default(),
            ensemble: EnsembleSection::default(),
            eval: EvalSection::default(),
        }
    }
}

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.model.validate()?;
        if let Some(ing) = &self.data.ingest {
            if !(ing.step_minutes > 0.0) {
                return bad("ingest.step_minutes must be positive".into());
            }
        } else {
            self.data.synthetic.validate()?;
        }
        let w = &self.data.window;
        if w.history != self.model.in_steps || w.target != self.model.out_steps {
            return bad(format!(
                "window {}+{} does not match model in_steps {} / out_steps {}",
                w.history, w.target, self.model.in_steps, self.model.out_steps
            ));
        }
        if w.stride == 0 {
            return bad("window.stride must be positive".into());
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return bad("training.batch_size must be positive".into());
        }
        if !(t.learning_rate > 0.0) || !(t.lambda_max >= 0.0) || !(t.lambda_ramp_epochs >= 0.0) {
            return bad("learning_rate must be positive and λ settings non-negative".into());
        }
        if !(0.0..=1.0).contains(&t.finetune_fraction) {
            return bad("training.finetune_fraction must lie in [0, 1]".into());
        }
        if !(t.grad_clip > 0.0) {
            return bad("training.grad_clip must be positive".into());
        }
        if self.variant == Variant::Ensemble && self.ensemble.n_members < 2 {
            return bad("ensemble.n_members must be at least 2".into());
        }
        if self.variant == Variant::McDropout && self.eval.mc_passes < 2 {
            return bad("eval.mc_passes must be at least 2".into());
        }
        if let Some(&l) = self.eval.map_leads.iter().find(|&&l| l == 0 || l > self.model.out_steps) {
            return bad(format!("map lead {l} outside 1..={}", self.model.out_steps));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::MissingInput {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Writes the resolved configuration into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG);
        write_atomic(&path, self.to_toml()?.as_bytes())?;
        Ok(path)
    }
}
