use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary diagnosis label. `Pd` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "non-pd")]
    NonPd,
    #[serde(rename = "pd")]
    Pd,
}

impl Label {
    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Pd
        } else {
            Label::NonPd
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Pd
    }

    pub fn as_f64(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Pd => "pd",
            Label::NonPd => "non-pd",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "pd" | "true" | "yes" | "1.0" => Ok(Label::Pd),
            "0" | "non-pd" | "nonpd" | "false" | "no" | "0.0" => Ok(Label::NonPd),
            other => Err(Error::data(format!("unrecognised label {other:?}"))),
        }
    }
}

/// One of the standardized recording tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Tapping,
    Smile,
    Speech,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Tapping, TaskKind::Smile, TaskKind::Speech];

    /// Feature width of the released feature sets: both-hand tapping
    /// features, facial smile features and speech embeddings.
    pub fn default_width(self) -> usize {
        match self {
            TaskKind::Tapping => 130,
            TaskKind::Smile => 42,
            TaskKind::Speech => 1024,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Tapping => "tapping",
            TaskKind::Smile => "smile",
            TaskKind::Speech => "speech",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tapping" | "finger-tapping" | "finger_tapping" => Ok(TaskKind::Tapping),
            "smile" => Ok(TaskKind::Smile),
            "speech" => Ok(TaskKind::Speech),
            other => Err(Error::config(format!(
                "unknown task {other:?} (expected tapping, smile or speech)"
            ))),
        }
    }
}

/// Parses a comma-separated task list such as `tapping,smile,speech`.
pub fn parse_task_list(s: &str) -> Result<Vec<TaskKind>> {
    let mut tasks: Vec<TaskKind> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    let n = tasks.len();
    tasks.sort();
    tasks.dedup();
    if tasks.len() != n || tasks.is_empty() {
        return Err(Error::config(format!("invalid task list {s:?}")));
    }
    Ok(tasks)
}

/// Short stable digest of a subject id, used to record split membership in
/// bundles without copying raw identifiers.
pub fn subject_digest(subject: &str) -> String {
    use sha2::{Digest, Sha256};
    let d = Sha256::digest(subject.as_bytes());
    hex::encode(&d[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_list_is_sorted_and_rejects_duplicates() {
        assert_eq!(
            parse_task_list("speech,tapping").unwrap(),
            vec![TaskKind::Tapping, TaskKind::Speech]
        );
        assert!(parse_task_list("smile,smile").is_err());
        assert!(parse_task_list("").is_err());
        assert!(parse_task_list("gait").is_err());
    }

    #[test]
    fn labels_parse_loosely() {
        assert_eq!("PD".parse::<Label>().unwrap(), Label::Pd);
        assert_eq!("0".parse::<Label>().unwrap(), Label::NonPd);
        assert!("maybe".parse::<Label>().is_err());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(subject_digest("s1"), subject_digest("s1"));
        assert_ne!(subject_digest("s1"), subject_digest("s2"));
        assert_eq!(subject_digest("s1").len(), 16);
    }
}
