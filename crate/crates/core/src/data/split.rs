use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Session;
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;
use crate::types::Label;

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];
pub const MIN_PER_CLASS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub assignments: BTreeMap<String, Fold>,
}

impl SplitPlan {
    pub fn fold_of(&self, subject: &str) -> Option<Fold> {
        self.assignments.get(subject).copied()
    }

    pub fn subjects_in(&self, fold: Fold) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Digest identifying this exact assignment.
    pub fn digest(&self) -> Result<String> {
        crate::fusion::digest_of(&self.assignments)
    }
}

/// One label per subject; a subject whose sessions disagree is a data error.
pub fn subject_labels(sessions: &[Session]) -> Result<BTreeMap<String, Label>> {
    let mut out = BTreeMap::new();
    for s in sessions {
        if let Some(prev) = out.insert(s.subject_id.clone(), s.label) {
            if prev != s.label {
                return Err(Error::data(format!("subject {:?} has sessions with different labels", s.subject_id)));
            }
        }
    }
    Ok(out)
}

/// Stratified subject-level split: each class is shuffled with the seeded
/// generator and cut by `ratios` (train and validation sizes rounded, test
/// takes the remainder).
pub fn make_split(subjects: &BTreeMap<String, Label>, ratios: [f64; 3], seed: u64) -> Result<SplitPlan> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut rng = seeded_rng(seed);
    let mut assignments = BTreeMap::new();
    for label in [Label::NonPd, Label::Pd] {
        let mut ids: Vec<&String> = subjects.iter().filter(|(_, l)| **l == label).map(|(s, _)| s).collect();
        if ids.len() < MIN_PER_CLASS {
            return Err(Error::data(format!(
                "class {label} has {} subjects, need at least {MIN_PER_CLASS}",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        let n_train = (n * ratios[0]).round() as usize;
        let n_val = ((n * ratios[1]).round() as usize).min(ids.len() - n_train);
        for (k, id) in ids.into_iter().enumerate() {
            let fold = if k < n_train {
                Fold::Train
            } else if k < n_train + n_val {
                Fold::Val
            } else {
                Fold::Test
            };
            assignments.insert(id.clone(), fold);
        }
    }
    Ok(SplitPlan {
        ratios,
        seed,
        assignments,
    })
}
