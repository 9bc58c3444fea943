//! Learning-rate schedules, updated once at the end of every epoch.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Minimum decrease that counts as an improvement under [`ScheduleConfig::Plateau`].
pub const PLATEAU_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMetric {
    #[default]
    EvalLoss,
    TrainLoss,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    #[default]
    Constant,
    /// Multiply the rate by `factor` at each listed 0-based epoch.
    StepAt { epochs: Vec<usize>, factor: f64 },
    /// Multiply the rate by `factor` after `patience` consecutive epochs
    /// without improvement of `metric`.
    Plateau {
        patience: usize,
        factor: f64,
        #[serde(default)]
        metric: PlateauMetric,
    },
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScheduleConfig::Constant => Ok(()),
            ScheduleConfig::StepAt { epochs, factor } => {
                check_factor(*factor)?;
                if epochs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(config(format!(
                        "schedule.epochs must be strictly increasing, got {epochs:?}"
                    )));
                }
                Ok(())
            }
            ScheduleConfig::Plateau { patience, factor, .. } => {
                check_factor(*factor)?;
                if *patience == 0 {
                    return Err(config("schedule.patience must be ≥ 1"));
                }
                Ok(())
            }
        }
    }
}

fn check_factor(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(config(format!("schedule.factor must be in (0, 1), got {f}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub config: ScheduleConfig,
    pub base_lr: f64,
    pub lr: f64,
    best: Option<f64>,
    stale: usize,
}

impl Schedule {
    pub fn new(config: ScheduleConfig, base_lr: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            base_lr,
            lr: base_lr,
            best: None,
            stale: 0,
        })
    }

    /// Rate for 0-based `epoch` under a step schedule; the current rate otherwise.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        match &self.config {
            ScheduleConfig::StepAt { epochs, factor } => {
                let passed = epochs.iter().filter(|&&e| e <= epoch).count();
                self.base_lr * factor.powi(passed as i32)
            }
            _ => self.lr,
        }
    }

    /// Record the end of 0-based `epoch` with its monitored `metric`;
    /// returns the rate for the next epoch.
    pub fn update(&mut self, epoch: usize, metric: f64) -> f64 {
        match self.config.clone() {
            ScheduleConfig::Constant => {}
            ScheduleConfig::StepAt { .. } => self.lr = self.lr_for_epoch(epoch + 1),
            ScheduleConfig::Plateau { patience, factor, .. } => {
                if self.best.is_none_or(|b| metric < b - PLATEAU_THRESHOLD) {
                    self.best = Some(metric);
                    self.stale = 0;
                } else {
                    self.stale += 1;
                    if self.stale >= patience {
                        self.lr *= factor;
                        self.stale = 0;
                    }
                }
            }
        }
        self.lr
    }

    pub fn metric(&self) -> PlateauMetric {
        match self.config {
            ScheduleConfig::Plateau { metric, .. } => metric,
            _ => PlateauMetric::EvalLoss,
        }
    }
}
