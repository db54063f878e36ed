use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}

impl OptimizerSettings {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Sgd,
            lr,
            momentum,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn adamw(lr: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::AdamW,
            ..Self::sgd(lr, 0.0)
        }
    }
}

/// Optimizer with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub settings: OptimizerSettings,
    lr: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings, params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Optimizer {
            lr: settings.lr,
            settings,
            step: 0,
            first: zeros(),
            second: match settings.kind {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::AdamW => zeros(),
            },
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter {i} at optimizer step {}",
                    self.step + 1
                )));
            }
            if g.shape() != params[i].shape() {
                return Err(Error::Dimension {
                    op: "optimizer_step",
                    left: params[i].shape(),
                    right: g.shape(),
                });
            }
        }
        self.step += 1;
        let s = &self.settings;
        match s.kind {
            OptimizerKind::Sgd => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = s.momentum * *vv + gv;
                        *pv -= self.lr * *vv;
                    }
                }
            }
            OptimizerKind::AdamW => {
                let t = self.step as i32;
                let bc1 = 1.0 - s.beta1.powi(t);
                let bc2 = 1.0 - s.beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let iter = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut());
                    for (((pv, &gv), mv), vv) in iter {
                        *pv -= self.lr * s.weight_decay * *pv;
                        *mv = s.beta1 * *mv + (1.0 - s.beta1) * gv;
                        *vv = s.beta2 * *vv + (1.0 - s.beta2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + s.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
