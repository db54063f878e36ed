//! Experiment driver: presets, withholding policies, seeded end-to-end runs
//! and the command-line front end.

pub mod bundle;
pub mod cli;
pub mod manifest;
pub mod pipeline;
pub mod policy;
pub mod presets;
pub mod search;
pub mod subgroup;

pub use pipeline::{
    calibration_seed, derive_seed, test_seed, evaluate_scores, fusion_fold, run_fusion_seed, run_fusion_sweep, summarize, train_task_on_cohort,
    FusionExperiment, PolicyReport, SeedOutcome, SweepSummary,
};
pub use policy::{Calibration, Policy, PredictionRecord, Withhold};
pub use bundle::{Bundle, FusionBundle, TaskBundle};
pub use manifest::Manifest;
pub use presets::{baseline_preset, fusion_preset, presets, task_preset, TaskPreset};

pub use search::{search_fusion, search_task, SearchOptions, SearchResult, Trial};
pub use subgroup::{subgroup_analysis, SubgroupReport};

use crate::error::Result;
use crate::fusion::BaselineKind;

/// The desk-scale configuration paired with
/// [`SyntheticCohortSpec::desk`](crate::data::SyntheticCohortSpec::desk):
/// every baseline, the early-fusion ablation and the three withholding
/// policies.
pub fn desk_experiment() -> Result<FusionExperiment> {
    let ufnet = fusion_preset("desk-ufnet")?.clone();
    let task_configs = ufnet
        .tasks
        .iter()
        .map(|t| Ok((*t, task_preset(&format!("desk-{t}"))?.config.clone())))
        .collect::<Result<_>>()?;
    Ok(FusionExperiment {
        task_configs,
        ufnet,
        baseline: baseline_preset("desk-baseline")?.clone(),
        baselines: BaselineKind::ALL.to_vec(),
        compare_early: true,
        policies: vec![
            Policy::new(Withhold::None, false),
            Policy::new(Withhold::McCi, false),
            Policy::new(Withhold::Conformal, false),
        ],
    })
}
