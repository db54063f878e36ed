//! Serialized models with the provenance needed to refuse leaky reuse.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{digest_of, BaselineModel, UfnetModel};
use crate::task_model::TaskModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bundle {
    Task(TaskBundle),
    Ufnet(FusionBundle<UfnetModel>),
    Baseline(FusionBundle<BaselineModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub version: String,
    pub preset: Option<String>,
    pub split_digest: String,
    /// Run index whose derived streams drive this model's MC passes.
    pub run: u64,
    pub model: TaskModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionBundle<M> {
    pub version: String,
    pub preset: Option<String>,
    pub split_digest: String,
    /// Digests of the frozen task models, in task order.
    pub task_models: Vec<String>,
    /// Run index whose derived streams built the fusion inputs.
    pub run: u64,
    pub model: M,
}

impl Bundle {
    pub fn split_digest(&self) -> &str {
        match self {
            Bundle::Task(b) => &b.split_digest,
            Bundle::Ufnet(b) => &b.split_digest,
            Bundle::Baseline(b) => &b.split_digest,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Bundle::Task(_) => "task",
            Bundle::Ufnet(_) => "ufnet",
            Bundle::Baseline(_) => "baseline",
        }
    }

    /// Subject digests the model saw in training or validation.
    pub fn seen_subjects(&self) -> &[String] {
        match self {
            Bundle::Task(b) => &b.model.seen_subjects,
            Bundle::Ufnet(b) => &b.model.seen_subjects,
            Bundle::Baseline(b) => b.model.model.as_ref().map_or(&[], |m| &m.seen_subjects),
        }
    }

    pub fn into_task(self) -> Result<TaskBundle> {
        match self {
            Bundle::Task(b) => Ok(b),
            other => Err(Error::config(format!("expected a task bundle, found a {} bundle", other.kind()))),
        }
    }
}

pub fn task_digest(model: &TaskModel) -> Result<String> {
    digest_of(model)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty JSON with a trailing newline; the byte layout is stable for equal
/// values.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?).map_err(|e| Error::io(path, e))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
