use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Constant,
    LinearRamp,
}

/// Regularizer weight as a function of the optimizer step.
///
/// In linear-ramp mode `λ(step) = lambda_max · min(1, step / ramp_steps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub lambda_max: f64,
    pub ramp_steps: u64,
    pub mode: ScheduleMode,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule {
            lambda_max: 0.01,
            ramp_steps: 1,
            mode: ScheduleMode::LinearRamp,
        }
    }
}

impl LambdaSchedule {
    pub fn constant(lambda: f64) -> Self {
        LambdaSchedule {
            lambda_max: lambda,
            ramp_steps: 1,
            mode: ScheduleMode::Constant,
        }
    }

    pub fn linear(lambda_max: f64, ramp_steps: u64) -> Self {
        LambdaSchedule {
            lambda_max,
            ramp_steps: ramp_steps.max(1),
            mode: ScheduleMode::LinearRamp,
        }
    }

    pub fn lambda(&self, step: u64) -> f64 {
        let lmax = self.lambda_max.max(0.0);
        match self.mode {
            ScheduleMode::Constant => lmax,
            ScheduleMode::LinearRamp => {
                let frac = (step as f64 / self.ramp_steps.max(1) as f64).min(1.0);
                lmax * frac
            }
        }
    }
}
