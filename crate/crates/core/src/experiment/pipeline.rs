//! End-to-end runs on a cohort: task models, fusion, baselines, evaluation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::Policy;
use crate::data::{Cohort, Fold, SplitPlan};
use crate::error::{Error, Result};
use crate::fusion::{train_baseline, train_ufnet, BaselineKind, FusionData, FusionMode, UfnetConfig, UfnetModel};
use crate::metrics::{aggregate_seeds, evaluate, EvalReport, SeedAggregate};
use crate::task_model::{train_task_model, McPrediction, TaskModel, TaskModelConfig};
use crate::types::{Label, TaskKind};
use crate::uncertainty::AbstainDecision;

/// Seed of one model within run `run`: the configured seed mixed with the
/// run index, so different runs and different models never share streams.
pub fn derive_seed(run: u64, base: u64) -> u64 {
    let mut z = run.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ base;
    z = (z ^ (z >> 31)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^ (z >> 29)
}

fn mc_seed(run: u64, fold: Fold) -> u64 {
    derive_seed(run, 0xfeed_0000 + fold as u64)
}

/// MC stream for test-set predictions of run `run`.
pub fn test_seed(run: u64) -> u64 {
    derive_seed(run, 0x7e57)
}

/// MC stream for the validation predictions that calibration is fitted on.
pub fn calibration_seed(run: u64) -> u64 {
    derive_seed(run, 0xca1)
}

/// Everything needed to train and compare one fusion configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionExperiment {
    pub task_configs: BTreeMap<TaskKind, TaskModelConfig>,
    pub ufnet: UfnetConfig,
    pub baseline: TaskModelConfig,
    #[serde(default)]
    pub baselines: Vec<BaselineKind>,
    /// Also train the same network without the probability skip.
    #[serde(default)]
    pub compare_early: bool,
    /// Withholding policies evaluated on the fusion model.
    #[serde(default)]
    pub policies: Vec<Policy>,
}

impl FusionExperiment {
    pub fn tasks(&self) -> &[TaskKind] {
        &self.ufnet.tasks
    }

    pub fn validate(&self) -> Result<()> {
        self.ufnet.validate()?;
        for t in self.tasks() {
            self.task_configs
                .get(t)
                .ok_or_else(|| Error::config(format!("no task model configuration for {t}")))?
                .validate()?;
        }
        self.baseline.validate()
    }
}

/// Trains one task model on the training-fold sessions that contain it.
pub fn train_task_on_cohort(
    cohort: &Cohort,
    plan: &SplitPlan,
    task: TaskKind,
    config: &TaskModelConfig,
    run: Option<u64>,
) -> Result<TaskModel> {
    let mut config = config.clone();
    if let Some(r) = run {
        config.train.seed = derive_seed(r, config.train.seed);
    }
    let tr = cohort.select(plan, Fold::Train, &[task])?;
    let va = cohort.select(plan, Fold::Val, &[task])?;
    let train = cohort.task_data(&tr, task)?;
    let val = (!va.is_empty()).then(|| cohort.task_data(&va, task)).transpose()?;
    train_task_model(&train, val.as_ref(), &config, Some(task))
}

/// Sessions of `fold` holding every task, run through the frozen models.
pub fn fusion_fold(cohort: &Cohort, plan: &SplitPlan, fold: Fold, models: &[&TaskModel], run: u64) -> Result<FusionData> {
    let tasks: Vec<TaskKind> = models
        .iter()
        .map(|m| m.task.ok_or_else(|| Error::input("task model has no task kind")))
        .collect::<Result<_>>()?;
    let idx = cohort.select(plan, fold, &tasks)?;
    if idx.is_empty() {
        return Err(Error::data(format!("no {fold:?} session holds all of {tasks:?}")));
    }
    let raw = tasks.iter().map(|&t| cohort.task_matrix(&idx, t)).collect::<Result<Vec<_>>>()?;
    FusionData::from_task_models(models, raw, cohort.labels(&idx), cohort.subjects(&idx), mc_seed(run, fold))
}

pub fn session_ids(cohort: &Cohort, plan: &SplitPlan, fold: Fold, tasks: &[TaskKind]) -> Result<Vec<String>> {
    Ok(cohort
        .select(plan, fold, tasks)?
        .into_iter()
        .map(|i| cohort.sessions[i].session_id.clone())
        .collect())
}

/// Plain thresholded evaluation of PD probabilities.
pub fn evaluate_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalReport> {
    let d: Vec<AbstainDecision> = scores
        .iter()
        .map(|&p| AbstainDecision::Predict(Label::from_positive(p > threshold)))
        .collect();
    evaluate(scores, labels, &d)
}

pub fn means(preds: &[McPrediction]) -> Vec<f64> {
    preds.iter().map(|p| p.mean).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: Policy,
    pub report: EvalReport,
}

/// Test-set results of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub run: u64,
    pub single: BTreeMap<TaskKind, EvalReport>,
    pub ufnet: EvalReport,
    #[serde(default)]
    pub ufnet_early: Option<EvalReport>,
    pub baselines: BTreeMap<String, EvalReport>,
    pub policies: Vec<PolicyReport>,
    /// Mean attention mass each task receives on the test set.
    pub attention: Vec<f64>,
}

/// Trained artefacts of one run, for callers that persist them.
pub struct SeedModels {
    pub tasks: Vec<TaskModel>,
    pub ufnet: UfnetModel,
}

/// Trains task models, the fusion model and the requested baselines with
/// seeds derived from `run`, then scores all of them on the test fold.
pub fn run_fusion_seed(
    cohort: &Cohort,
    plan: &SplitPlan,
    exp: &FusionExperiment,
    run: u64,
) -> Result<(SeedOutcome, SeedModels)> {
    exp.validate()?;
    let tasks = exp.tasks().to_vec();
    let models = tasks
        .iter()
        .map(|t| train_task_on_cohort(cohort, plan, *t, &exp.task_configs[t], Some(run)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TaskModel> = models.iter().collect();
    let train = fusion_fold(cohort, plan, Fold::Train, &refs, run)?;
    let val = fusion_fold(cohort, plan, Fold::Val, &refs, run)?;
    let test = fusion_fold(cohort, plan, Fold::Test, &refs, run)?;
    let test_ids = session_ids(cohort, plan, Fold::Test, &tasks)?;

    let mut single = BTreeMap::new();
    for (ti, t) in tasks.iter().enumerate() {
        single.insert(*t, evaluate_scores(&test.mu.column(ti), &test.labels, 0.5)?);
    }

    let mut cfg = exp.ufnet.clone();
    cfg.train.seed = derive_seed(run, cfg.train.seed);
    let ufnet = train_ufnet(&train, Some(&val), &cfg, &refs)?;
    let mc_test_seed = test_seed(run);
    let test_preds = ufnet.predict(&test, mc_test_seed)?;
    let ufnet_report = evaluate_scores(&means(&test_preds), &test.labels, 0.5)?;

    let ufnet_early = if exp.compare_early && cfg.mode != FusionMode::Early {
        let mut early = cfg.clone();
        early.mode = FusionMode::Early;
        let m = train_ufnet(&train, Some(&val), &early, &refs)?;
        Some(evaluate_scores(&means(&m.predict(&test, mc_test_seed)?), &test.labels, 0.5)?)
    } else {
        None
    };

    let mut baselines = BTreeMap::new();
    let mut bcfg = exp.baseline.clone();
    bcfg.train.seed = derive_seed(run, bcfg.train.seed);
    for kind in &exp.baselines {
        let b = train_baseline(*kind, &train, Some(&val), &bcfg)?;
        let p = b.predict(&test, mc_test_seed)?;
        baselines.insert(kind.name().to_string(), evaluate_scores(&means(&p), &test.labels, b.threshold)?);
    }

    let mut policies = Vec::new();
    if !exp.policies.is_empty() {
        let val_preds = ufnet.predict(&val, calibration_seed(run))?;
        for policy in &exp.policies {
            let cal = policy.fit(&val_preds, &val.labels)?;
            let (report, _) = cal.evaluate(&test_preds, &test.labels, &test_ids)?;
            policies.push(PolicyReport {
                policy: *policy,
                report,
            });
        }
    }
    let attention = ufnet.attention_profile(&test)?;
    Ok((
        SeedOutcome {
            run,
            single,
            ufnet: ufnet_report,
            ufnet_early,
            baselines,
            policies,
            attention,
        },
        SeedModels { tasks: models, ufnet },
    ))
}

/// Per-model aggregates over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<u64>,
    pub single: BTreeMap<TaskKind, SeedAggregate>,
    pub ufnet: SeedAggregate,
    pub ufnet_early: Option<SeedAggregate>,
    pub baselines: BTreeMap<String, SeedAggregate>,
    pub policies: Vec<(Policy, SeedAggregate)>,
}

/// Runs every seed in parallel; results come back in `runs` order.
pub fn run_fusion_sweep(
    cohort: &Cohort,
    plan: &SplitPlan,
    exp: &FusionExperiment,
    runs: &[u64],
) -> Result<(Vec<SeedOutcome>, SweepSummary)> {
    let outcomes = runs
        .par_iter()
        .map(|&r| run_fusion_seed(cohort, plan, exp, r).map(|(o, _)| o))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&outcomes)?;
    Ok((outcomes, summary))
}

pub fn summarize(outcomes: &[SeedOutcome]) -> Result<SweepSummary> {
    let first = outcomes.first().ok_or_else(|| Error::input("no runs to summarize"))?;
    let collect = |f: &dyn Fn(&SeedOutcome) -> Option<EvalReport>| -> Result<Option<SeedAggregate>> {
        let reps: Vec<EvalReport> = outcomes.iter().filter_map(f).collect();
        if reps.len() == outcomes.len() {
            aggregate_seeds(&reps).map(Some)
        } else {
            Ok(None)
        }
    };
    let mut single = BTreeMap::new();
    for t in first.single.keys() {
        single.insert(*t, collect(&|o| o.single.get(t).cloned())?.expect("every run has every task"));
    }
    let mut baselines = BTreeMap::new();
    for name in first.baselines.keys() {
        if let Some(a) = collect(&|o| o.baselines.get(name).cloned())? {
            baselines.insert(name.clone(), a);
        }
    }
    let mut policies = Vec::new();
    for (i, p) in first.policies.iter().enumerate() {
        if let Some(a) = collect(&|o| o.policies.get(i).map(|r| r.report.clone()))? {
            policies.push((p.policy, a));
        }
    }
    Ok(SweepSummary {
        runs: outcomes.iter().map(|o| o.run).collect(),
        single,
        ufnet: collect(&|o| Some(o.ufnet.clone()))?.expect("present"),
        ufnet_early: collect(&|o| o.ufnet_early.clone())?,
        baselines,
        policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_runs_and_bases() {
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
