use serde::{Deserialize, Serialize};

use super::FusionData;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::task_model::{train_task_model, McPrediction, TaskData, TaskModel, TaskModelConfig};
use crate::types::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Vote of the task models' labels.
    Majority,
    /// Shallow net on the task models' logits.
    Late,
    /// Shallow net on concatenated raw features.
    Early,
    /// Shallow net on raw features plus logits.
    Hybrid,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Majority,
        BaselineKind::Late,
        BaselineKind::Early,
        BaselineKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Majority => "majority",
            BaselineKind::Late => "late",
            BaselineKind::Early => "early",
            BaselineKind::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown baseline {s:?}")))
    }
}

/// Label chosen by at least two of three task models.
pub fn baseline_majority(votes: &[Label]) -> Result<Label> {
    if votes.len() != 3 {
        return Err(Error::input(format!("majority vote needs 3 votes, got {}", votes.len())));
    }
    let pd = votes.iter().filter(|v| v.is_positive()).count();
    Ok(Label::from_positive(pd >= 2))
}

/// Network input for a trainable baseline.
pub fn baseline_inputs(kind: BaselineKind, data: &FusionData) -> Result<Matrix> {
    match kind {
        BaselineKind::Majority => Err(Error::config("majority voting has no learned input")),
        BaselineKind::Late => Ok(data.logits()),
        BaselineKind::Early => Matrix::hstack(&data.raw.iter().collect::<Vec<_>>()),
        BaselineKind::Hybrid => {
            let logits = data.logits();
            let mut parts: Vec<&Matrix> = data.raw.iter().collect();
            parts.push(&logits);
            Matrix::hstack(&parts)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    #[serde(default)]
    pub model: Option<TaskModel>,
    #[serde(default = "half")]
    pub threshold: f64,
}

fn half() -> f64 {
    0.5
}

pub fn train_baseline(
    kind: BaselineKind,
    train: &FusionData,
    val: Option<&FusionData>,
    config: &TaskModelConfig,
) -> Result<BaselineModel> {
    let model = match kind {
        BaselineKind::Majority => {
            if train.num_tasks() != 3 {
                return Err(Error::config("majority voting needs all three tasks"));
            }
            None
        }
        _ => {
            let to_data = |d: &FusionData| {
                TaskData::new(baseline_inputs(kind, d)?, d.labels.clone(), d.subjects.clone())
            };
            let v = val.map(to_data).transpose()?;
            Some(train_task_model(&to_data(train)?, v.as_ref(), config, None)?)
        }
    };
    Ok(BaselineModel {
        kind,
        model,
        threshold: 0.5,
    })
}

impl BaselineModel {
    /// Majority voting reports the fraction of PD votes as its score.
    pub fn predict(&self, data: &FusionData, seed: u64) -> Result<Vec<McPrediction>> {
        match (&self.model, self.kind) {
            (None, BaselineKind::Majority) => (0..data.len())
                .map(|s| {
                    let votes: Vec<Label> = (0..data.num_tasks())
                        .map(|t| Label::from_positive(data.mu.get(s, t) > self.threshold))
                        .collect();
                    let label = baseline_majority(&votes)?;
                    let frac = votes.iter().filter(|v| v.is_positive()).count() as f64 / 3.0;
                    debug_assert_eq!(label.is_positive(), frac > 0.5);
                    Ok(McPrediction::point(frac, 1))
                })
                .collect(),
            (Some(m), kind) => m.predict(&baseline_inputs(kind, data)?, seed),
            (None, _) => Err(Error::State("baseline has no trained network".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TaskKind;
    use Label::{NonPd as N, Pd as P};

    #[test]
    fn majority_examples() {
        assert_eq!(baseline_majority(&[P, P, N]).unwrap(), P);
        assert_eq!(baseline_majority(&[N, N, N]).unwrap(), N);
        assert_eq!(baseline_majority(&[P, N, P]).unwrap(), P);
        assert_eq!(baseline_majority(&[P, N, N]).unwrap(), N);
        assert!(baseline_majority(&[P, N]).is_err());
    }

    fn data() -> FusionData {
        let raw = vec![Matrix::zeros(4, 3), Matrix::zeros(4, 2), Matrix::zeros(4, 5)];
        FusionData {
            tasks: TaskKind::ALL.to_vec(),
            features: raw.clone(),
            raw,
            mu: Matrix::from_rows(&[[0.9, 0.8, 0.1], [0.2, 0.3, 0.9], [0.6, 0.4, 0.7], [0.1, 0.1, 0.1]]),
            sigma: Matrix::zeros(4, 3),
            labels: vec![true, false, true, false],
            subjects: (0..4).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn input_widths() {
        let d = data();
        assert_eq!(baseline_inputs(BaselineKind::Late, &d).unwrap().cols(), 3);
        assert_eq!(baseline_inputs(BaselineKind::Early, &d).unwrap().cols(), 10);
        assert_eq!(baseline_inputs(BaselineKind::Hybrid, &d).unwrap().cols(), 13);
    }

    #[test]
    fn majority_predictions_follow_votes() {
        let d = data();
        let m = BaselineModel {
            kind: BaselineKind::Majority,
            model: None,
            threshold: 0.5,
        };
        let labels: Vec<bool> = m
            .predict(&d, 0)
            .unwrap()
            .iter()
            .map(|p| p.label(0.5).is_positive())
            .collect();
        assert_eq!(labels, vec![true, false, true, false]);
    }
}
