//! Sessions, feature-table ingest, subject-level splits and synthetic cohorts.

pub mod csv;
pub mod split;
pub mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::task_model::TaskData;
use crate::types::{Label, TaskKind};

pub use self::csv::{join_fragments, load_cohort_dir, load_task_csv, write_subjects_csv, write_task_csv, ColumnMapping, TaskFragment};
pub use split::{make_split, subject_labels, Fold, SplitPlan, DEFAULT_RATIOS};
pub use synthetic::{gen_synthetic_cohort, SyntheticCohortSpec, TaskSignal};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub sex: Option<String>,
    pub age: Option<f64>,
    pub ethnicity: Option<String>,
    pub cohort: Option<String>,
    /// Years since diagnosis.
    pub disease_duration: Option<f64>,
}

impl Demographics {
    /// Fills unknown fields from `other`.
    pub fn merge(&mut self, other: &Demographics) {
        self.sex = self.sex.take().or_else(|| other.sex.clone());
        self.age = self.age.or(other.age);
        self.ethnicity = self.ethnicity.take().or_else(|| other.ethnicity.clone());
        self.cohort = self.cohort.take().or_else(|| other.cohort.clone());
        self.disease_duration = self.disease_duration.or(other.disease_duration);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub subject_id: String,
    pub session_id: String,
    pub label: Label,
    pub demographics: Demographics,
    pub features: BTreeMap<TaskKind, Vec<f64>>,
}

impl Session {
    pub fn has_tasks(&self, tasks: &[TaskKind]) -> bool {
        tasks.iter().all(|t| self.features.contains_key(t))
    }
}

/// Sessions plus the declared feature width of every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub widths: BTreeMap<TaskKind, usize>,
    pub sessions: Vec<Session>,
}

impl Cohort {
    pub fn validate(&self) -> Result<()> {
        for s in &self.sessions {
            if s.features.is_empty() {
                return Err(Error::data(format!("session {} has no task", s.session_id)));
            }
            for (task, f) in &s.features {
                let w = self.widths.get(task).copied().unwrap_or(task.default_width());
                if f.len() != w {
                    return Err(Error::data(format!(
                        "session {} task {task}: expected {w} features, found {}",
                        s.session_id,
                        f.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices of sessions in `fold` that contain all `tasks`.
    pub fn select(&self, plan: &SplitPlan, fold: Fold, tasks: &[TaskKind]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, s) in self.sessions.iter().enumerate() {
            let f = plan.fold_of(&s.subject_id).ok_or_else(|| {
                Error::data(format!("subject {} is missing from the split plan", s.subject_id))
            })?;
            if f == fold && s.has_tasks(tasks) {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Feature matrix of `task` over the given sessions.
    pub fn task_matrix(&self, idx: &[usize], task: TaskKind) -> Result<Matrix> {
        let w = self.widths.get(&task).copied().unwrap_or(task.default_width());
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            let f = self.sessions[i].features.get(&task).ok_or_else(|| {
                Error::data(format!("session {} lacks {task}", self.sessions[i].session_id))
            })?;
            data.extend_from_slice(f);
        }
        Matrix::from_vec(idx.len(), w, data)
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<bool> {
        idx.iter().map(|&i| self.sessions[i].label.is_positive()).collect()
    }

    pub fn subjects(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.sessions[i].subject_id.clone()).collect()
    }

    pub fn task_data(&self, idx: &[usize], task: TaskKind) -> Result<TaskData> {
        TaskData::new(self.task_matrix(idx, task)?, self.labels(idx), self.subjects(idx))
    }
}
