//! Named hyperparameter sets shipped with the crate.
//!
//! `presets/presets.json` holds the tuned configurations with their
//! continuous values at full precision; `presets/desk.json` holds the small
//! configurations used on the synthetic desk cohort.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::UfnetConfig;
use crate::task_model::TaskModelConfig;
use crate::types::TaskKind;

const TUNED: &str = include_str!("../../presets/presets.json");
const DESK: &str = include_str!("../../presets/desk.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPreset {
    pub task: TaskKind,
    pub config: TaskModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetFile {
    pub task: BTreeMap<String, TaskPreset>,
    pub fusion: BTreeMap<String, UfnetConfig>,
    /// Shallow networks behind the late, early and hybrid baselines.
    #[serde(default)]
    pub baseline: BTreeMap<String, TaskModelConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Presets {
    pub task: BTreeMap<String, TaskPreset>,
    pub fusion: BTreeMap<String, UfnetConfig>,
    pub baseline: BTreeMap<String, TaskModelConfig>,
}

fn parse(src: &str) -> PresetFile {
    serde_json::from_str(src).expect("embedded preset file is valid")
}

/// Every shipped preset; names are unique across both files.
pub fn presets() -> &'static Presets {
    static CELL: OnceLock<Presets> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut p = Presets {
            task: BTreeMap::new(),
            fusion: BTreeMap::new(),
            baseline: BTreeMap::new(),
        };
        for file in [parse(TUNED), parse(DESK)] {
            p.task.extend(file.task);
            p.fusion.extend(file.fusion);
            p.baseline.extend(file.baseline);
        }
        p
    })
}

fn unknown(kind: &str, name: &str, names: impl Iterator<Item = String>) -> Error {
    let list: Vec<String> = names.collect();
    Error::config(format!("unknown {kind} preset {name:?}; available: {}", list.join(", ")))
}

pub fn task_preset(name: &str) -> Result<&'static TaskPreset> {
    let p = presets();
    p.task.get(name).ok_or_else(|| unknown("task", name, p.task.keys().cloned()))
}

pub fn fusion_preset(name: &str) -> Result<&'static UfnetConfig> {
    let p = presets();
    p.fusion.get(name).ok_or_else(|| unknown("fusion", name, p.fusion.keys().cloned()))
}

pub fn baseline_preset(name: &str) -> Result<&'static TaskModelConfig> {
    let p = presets();
    p.baseline.get(name).ok_or_else(|| unknown("baseline", name, p.baseline.keys().cloned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{OptimizerKind, SchedulerSettings};

    #[test]
    fn every_preset_validates() {
        for (name, p) in &presets().task {
            p.config.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        for (name, c) in &presets().fusion {
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        for (name, c) in &presets().baseline {
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn tuned_values_are_verbatim() {
        let c = &task_preset("speech-mc").unwrap().config;
        assert_eq!(c.dropout, 0.23420212038821583);
        assert_eq!(c.mc_rounds, 10000);
        assert_eq!(c.train.optimizer.kind, OptimizerKind::AdamW);
        assert_eq!(c.preprocess.drop_correlated, Some(0.95));
        assert_eq!(c.preprocess.scaling, None);
        let t = &task_preset("tapping-mc").unwrap().config;
        assert_eq!(t.train.optimizer.momentum, 0.9206317439937552);
        assert!(matches!(t.train.scheduler, Some(SchedulerSettings::ReduceOnPlateau { patience: 13, .. })));
        let u = fusion_preset("ufnet-all").unwrap();
        assert_eq!((u.projection_dim, u.qkv_dim, u.hidden_width), (512, 64, 128));
        assert_eq!((u.eta, u.dropout, u.train.optimizer.lr), (81.8179035, 0.4959892, 0.020724));
        assert_eq!((u.train.epochs, u.train.seed, u.mc_rounds), (164, 242, 30));
        assert_eq!(fusion_preset("ufnet-smile-speech").unwrap().hidden_width, 4);
    }

    #[test]
    fn unknown_name_lists_available() {
        let e = task_preset("nope").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("smile-mc"));
    }
}
