use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerSettings {
    /// Multiply the learning rate by `gamma` every `step_size` epochs.
    Step { step_size: usize, gamma: f64 },
    /// Multiply by `gamma` once validation loss has not improved (by more
    /// than `min_delta`) for more than `patience` epochs.
    ReduceOnPlateau {
        patience: usize,
        gamma: f64,
        #[serde(default = "default_min_delta")]
        min_delta: f64,
    },
}

fn default_min_delta() -> f64 {
    1e-6
}

/// Factor used when a preset enables a scheduler without naming gamma.
pub const DEFAULT_GAMMA: f64 = 0.1;

impl SchedulerSettings {
    pub fn validate(&self) -> Result<()> {
        let (gamma, n) = match *self {
            SchedulerSettings::Step { step_size, gamma } => (gamma, step_size),
            SchedulerSettings::ReduceOnPlateau { gamma, .. } => (gamma, 1),
        };
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::config(format!("scheduler gamma {gamma} not in (0, 1]")));
        }
        if n == 0 {
            return Err(Error::config("scheduler step size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    settings: SchedulerSettings,
    epoch: usize,
    best: f64,
    bad_epochs: usize,
}

impl Scheduler {
    pub fn new(settings: SchedulerSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Scheduler {
            settings,
            epoch: 0,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    /// Called once per finished epoch; returns the learning rate to use next.
    pub fn end_epoch(&mut self, lr: f64, val_loss: Option<f64>) -> f64 {
        self.epoch += 1;
        match self.settings {
            SchedulerSettings::Step { step_size, gamma } => {
                if self.epoch % step_size == 0 {
                    lr * gamma
                } else {
                    lr
                }
            }
            SchedulerSettings::ReduceOnPlateau {
                patience,
                gamma,
                min_delta,
            } => {
                let Some(loss) = val_loss else { return lr };
                if loss < self.best - min_delta {
                    self.best = loss;
                    self.bad_epochs = 0;
                    lr
                } else {
                    self.bad_epochs += 1;
                    if self.bad_epochs > patience {
                        self.bad_epochs = 0;
                        lr * gamma
                    } else {
                        lr
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule_decays_on_boundaries() {
        let mut s = Scheduler::new(SchedulerSettings::Step {
            step_size: 2,
            gamma: 0.5,
        })
        .unwrap();
        let mut lr = 1.0;
        let mut seen = vec![];
        for _ in 0..5 {
            lr = s.end_epoch(lr, None);
            seen.push(lr);
        }
        assert_eq!(seen, vec![1.0, 0.5, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn plateau_waits_for_patience_and_never_increases() {
        let mut s = Scheduler::new(SchedulerSettings::ReduceOnPlateau {
            patience: 2,
            gamma: 0.5,
            min_delta: 1e-6,
        })
        .unwrap();
        let mut lr = 1.0;
        let losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.8, 0.8];
        let mut seen = vec![];
        for l in losses {
            let next = s.end_epoch(lr, Some(l));
            assert!(next <= lr);
            lr = next;
            seen.push(lr);
        }
        assert_eq!(seen, vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn gamma_is_validated() {
        assert!(Scheduler::new(SchedulerSettings::Step {
            step_size: 1,
            gamma: 1.5
        })
        .is_err());
        assert!(Scheduler::new(SchedulerSettings::ReduceOnPlateau {
            patience: 1,
            gamma: 0.0,
            min_delta: 0.0
        })
        .is_err());
    }
}
