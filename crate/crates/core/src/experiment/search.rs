//! Seeded random search over the tuned hyperparameter spaces, selecting by
//! validation AUROC.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{train_ufnet, FusionData, FusionMode, UfnetConfig};
use crate::metrics::auroc;
use crate::network::TrainSettings;
use crate::numerics::{substream, OptimizerSettings, Rng, SchedulerSettings};
use crate::preprocessing::{OversampleMethod, PreprocessConfig, ScalerKind};
use crate::task_model::{train_task_model, TaskData, TaskModel, TaskModelConfig, DEFAULT_HIDDEN_WIDTH};
use crate::types::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub trials: usize,
    pub seed: u64,
    /// Optional cap on sampled epoch counts, to bound desk-scale runtime.
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial<C> {
    pub index: usize,
    pub config: C,
    pub val_auroc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<C> {
    pub options: SearchOptions,
    pub trials: Vec<Trial<C>>,
    pub best: usize,
}

impl<C> SearchResult<C> {
    pub fn best_trial(&self) -> &Trial<C> {
        &self.trials[self.best]
    }
}

fn flip(rng: &mut Rng) -> bool {
    rng.random_bool(0.5)
}

fn pick<T: Copy>(rng: &mut Rng, xs: &[T]) -> T {
    *xs.choose(rng).expect("non-empty choice set")
}

fn epochs(rng: &mut Rng, hi: usize, cap: Option<usize>) -> usize {
    let e = rng.random_range(1..=hi);
    cap.map_or(e, |c| e.min(c.max(1)))
}

/// Optimizer, scheduler and batch size shared by every space.
fn sample_train(rng: &mut Rng, lr_lo: f64, max_epochs: usize, opts: &SearchOptions, seed: u64) -> TrainSettings {
    let batch_size = pick(rng, &[256, 512, 1024]);
    let lr = rng.random_range(lr_lo..=1.0);
    let epochs = epochs(rng, max_epochs, opts.max_epochs);
    let optimizer = if flip(rng) {
        OptimizerSettings::sgd(lr, rng.random_range(0.1..=1.0))
    } else {
        OptimizerSettings::adamw(lr)
    };
    let scheduler = flip(rng).then(|| {
        let gamma = rng.random_range(0.5..=0.95);
        if flip(rng) {
            SchedulerSettings::Step {
                step_size: rng.random_range(1..=30),
                gamma,
            }
        } else {
            SchedulerSettings::ReduceOnPlateau {
                patience: rng.random_range(1..=20),
                gamma,
                min_delta: 1e-6,
            }
        }
    });
    TrainSettings {
        batch_size,
        epochs,
        optimizer,
        scheduler,
        seed,
        label_smoothing: 0.0,
    }
}

/// One draw from the task-model space; `mc` adds dropout and round count.
pub fn sample_task_config(rng: &mut Rng, mc: bool, opts: &SearchOptions) -> TaskModelConfig {
    let preprocess = PreprocessConfig {
        drop_correlated: flip(rng).then(|| pick(rng, &[0.80, 0.85, 0.90, 0.95])),
        scaling: flip(rng).then(|| pick(rng, &[ScalerKind::Standard, ScalerKind::MinMax])),
        oversample: flip(rng).then_some(OversampleMethod::Smote),
    };
    let hidden_layers = pick(rng, &[0, 1]);
    let (dropout, mc_rounds) = if mc {
        (rng.random_range(0.01..=0.30), pick(rng, &[100, 300, 500, 1000, 3000, 5000, 10000]))
    } else {
        (0.0, 1)
    };
    let seed = rng.random_range(100..=999);
    TaskModelConfig {
        hidden_layers,
        hidden_width: DEFAULT_HIDDEN_WIDTH,
        dropout,
        mc_rounds,
        preprocess,
        train: sample_train(rng, 0.0005, 100, opts, seed),
    }
}

/// One draw from the fusion space. The optimizer set omits RMSprop.
pub fn sample_fusion_config(rng: &mut Rng, tasks: &[TaskKind], opts: &SearchOptions) -> UfnetConfig {
    let oversample = flip(rng).then(|| pick(rng, &[OversampleMethod::Smote, OversampleMethod::Random]));
    let projection_dim = pick(rng, &[128, 256, 512]);
    let qkv_dim = pick(rng, &[32, 64, 128, 256]);
    let hidden_width = pick(rng, &[4, 8, 16, 32, 64, 128]);
    let dropout = rng.random_range(0.05..=0.50);
    let eta = rng.random_range(0.1..=100.0);
    let seed = rng.random_range(100..=999);
    UfnetConfig {
        tasks: tasks.to_vec(),
        projection_dim,
        qkv_dim,
        hidden_width,
        dropout,
        eta,
        mc_rounds: 30,
        mode: FusionMode::Hybrid,
        oversample,
        train: sample_train(rng, 5e-5, 300, opts, seed),
    }
}

fn select<C>(options: SearchOptions, trials: Vec<Trial<C>>) -> Result<SearchResult<C>> {
    let best = trials
        .iter()
        .filter_map(|t| t.val_auroc.map(|a| (t.index, a)))
        .fold(None::<(usize, f64)>, |acc, (i, a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((i, a)),
        })
        .ok_or_else(|| Error::Numerical("every search trial failed".into()))?
        .0;
    Ok(SearchResult { options, trials, best })
}

fn run_trials<C, S, E>(opts: SearchOptions, sample: S, eval: E) -> Result<SearchResult<C>>
where
    C: Send,
    S: Fn(&mut Rng) -> C + Sync,
    E: Fn(&C) -> Result<f64> + Sync,
{
    if opts.trials == 0 {
        return Err(Error::config("search needs at least one trial"));
    }
    let trials: Vec<Trial<C>> = (0..opts.trials)
        .into_par_iter()
        .map(|i| {
            let config = sample(&mut substream(opts.seed, i as u64));
            let (val_auroc, error) = match eval(&config) {
                Ok(a) if a.is_finite() => (Some(a), None),
                Ok(a) => (None, Some(format!("non-finite AUROC {a}"))),
                Err(e) => (None, Some(e.to_string())),
            };
            Trial {
                index: i,
                config,
                val_auroc,
                error,
            }
        })
        .collect();
    select(opts, trials)
}

pub fn task_val_auroc(model: &TaskModel, val: &TaskData) -> Result<f64> {
    let preds = model.predict(&val.x, model.config.train.seed)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    auroc(&scores, &val.labels)
}

pub fn search_task(
    task: TaskKind,
    train: &TaskData,
    val: &TaskData,
    mc: bool,
    opts: SearchOptions,
) -> Result<SearchResult<TaskModelConfig>> {
    run_trials(
        opts,
        |rng| sample_task_config(rng, mc, &opts),
        |config| task_val_auroc(&train_task_model(train, Some(val), config, Some(task))?, val),
    )
}

pub fn search_fusion(
    train: &FusionData,
    val: &FusionData,
    task_models: &[&TaskModel],
    opts: SearchOptions,
) -> Result<SearchResult<UfnetConfig>> {
    let tasks = train.tasks.clone();
    run_trials(
        opts,
        |rng| sample_fusion_config(rng, &tasks, &opts),
        |config| {
            let model = train_ufnet(train, Some(val), config, task_models)?;
            let preds = model.predict(val, config.train.seed)?;
            let scores: Vec<f64> = preds.iter().map(|p| p.mean).collect();
            auroc(&scores, &val.labels)
        },
    )
}
