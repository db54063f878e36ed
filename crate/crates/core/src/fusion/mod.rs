//! Uncertainty-calibrated fusion network and baseline fusion strategies.

pub mod attention;
pub mod baselines;
pub mod ufnet;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::task_model::TaskModel;
use crate::types::TaskKind;

pub use attention::{attend, calibrated_attention, AttentionTrace};
pub use baselines::{baseline_majority, train_baseline, BaselineKind, BaselineModel};
pub use ufnet::{train_ufnet, FusionMode, UfnetConfig, UfnetModel};

/// Complete sessions ready for fusion: per-task features plus the frozen
/// task models' MC outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionData {
    pub tasks: Vec<TaskKind>,
    /// Raw features per task, `b×d_i`.
    pub raw: Vec<Matrix>,
    /// Features after each task model's own preprocessing.
    pub features: Vec<Matrix>,
    /// `b×T` mean probabilities.
    pub mu: Matrix,
    /// `b×T` MC standard deviations.
    pub sigma: Matrix,
    pub labels: Vec<bool>,
    pub subjects: Vec<String>,
}

impl FusionData {
    /// Runs every frozen task model over its task's raw features.
    ///
    /// `seed` drives the MC rounds; task `t` uses `seed + t` so that the
    /// tasks draw independent masks.
    pub fn from_task_models(
        models: &[&TaskModel],
        raw: Vec<Matrix>,
        labels: Vec<bool>,
        subjects: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        if models.len() != raw.len() || models.is_empty() {
            return Err(Error::input("one task model per feature matrix is required"));
        }
        let b = labels.len();
        if subjects.len() != b || raw.iter().any(|m| m.rows() != b) {
            return Err(Error::input("fusion inputs disagree on the number of sessions"));
        }
        let tasks = models
            .iter()
            .map(|m| m.task.ok_or_else(|| Error::input("task model has no task kind")))
            .collect::<Result<Vec<_>>>()?;
        let t = models.len();
        let mut mu = Matrix::zeros(b, t);
        let mut sigma = Matrix::zeros(b, t);
        let mut features = Vec::with_capacity(t);
        for (ti, (model, x)) in models.iter().zip(&raw).enumerate() {
            features.push(model.transform(x)?);
            let preds = model.predict(x, seed.wrapping_add(ti as u64))?;
            for (s, p) in preds.iter().enumerate() {
                mu.set(s, ti, p.mean);
                sigma.set(s, ti, p.std);
            }
        }
        Ok(FusionData {
            tasks,
            raw,
            features,
            mu,
            sigma,
            labels,
            subjects,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.features.len()
    }

    pub fn select(&self, idx: &[usize]) -> FusionData {
        FusionData {
            tasks: self.tasks.clone(),
            raw: self.raw.iter().map(|m| m.select_rows(idx)).collect(),
            features: self.features.iter().map(|m| m.select_rows(idx)).collect(),
            mu: self.mu.select_rows(idx),
            sigma: self.sigma.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    /// Logit of every task's mean probability, `b×T`.
    pub fn logits(&self) -> Matrix {
        self.mu.map(crate::uncertainty::logit)
    }
}

/// Stable digest of a serializable value, used to prove a model was not
/// modified and to reference bundles.
pub fn digest_of<T: serde::Serialize>(value: &T) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
