//! Per-task shallow classifiers with Monte Carlo dropout.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{eval_bce, init_rng, labels_f64, run_training, ShallowNet, TrainSettings};
use crate::numerics::{check_dropout, substream, Matrix, Rng};
use crate::preprocessing::{oversample_minority, PreprocessConfig, PreprocessPipeline, SMOTE_NEIGHBORS};
use crate::types::{subject_digest, Label, TaskKind};
use crate::uncertainty::{ci_from_moments, logit, sample_std};

pub const DEFAULT_HIDDEN_WIDTH: usize = 64;
pub const CI_LEVEL: f64 = 0.95;
const OVERSAMPLE_STREAM: u64 = 2;

/// Mean, spread and interval of the per-round outputs for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPrediction {
    pub mean: f64,
    pub std: f64,
    pub rounds: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl McPrediction {
    pub fn from_rounds(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "no MC rounds");
        let n = values.len();
        if values.iter().all(|&v| v == values[0]) {
            return McPrediction::point(values[0], n);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = sample_std(values, mean);
        let (ci_low, ci_high) = ci_from_moments(mean, std, n, CI_LEVEL);
        McPrediction {
            mean,
            std,
            rounds: n,
            ci_low,
            ci_high,
        }
    }

    /// A deterministic single-pass output.
    pub fn point(mean: f64, rounds: usize) -> Self {
        McPrediction {
            mean,
            std: 0.0,
            rounds,
            ci_low: mean,
            ci_high: mean,
        }
    }

    pub fn label(&self, threshold: f64) -> Label {
        predict_label(self, threshold)
    }

    pub fn logit(&self) -> f64 {
        logit(self.mean)
    }
}

/// PD iff the mean probability is strictly above `threshold`.
pub fn predict_label(pred: &McPrediction, threshold: f64) -> Label {
    Label::from_positive(pred.mean > threshold)
}

fn default_hidden_width() -> usize {
    DEFAULT_HIDDEN_WIDTH
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModelConfig {
    /// 0 (logistic) or 1 hidden layer.
    pub hidden_layers: usize,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "one")]
    pub mc_rounds: usize,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub train: TrainSettings,
}

impl TaskModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 1 {
            return Err(Error::config("task models support 0 or 1 hidden layers"));
        }
        if self.hidden_layers == 1 && self.hidden_width == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if self.mc_rounds == 0 {
            return Err(Error::config("mc rounds must be at least 1"));
        }
        check_dropout(self.dropout)?;
        self.train.validate()
    }

    pub fn is_mc(&self) -> bool {
        self.dropout > 0.0
    }
}

/// Feature rows with labels and the subject each row belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub x: Matrix,
    pub labels: Vec<bool>,
    pub subjects: Vec<String>,
}

impl TaskData {
    pub fn new(x: Matrix, labels: Vec<bool>, subjects: Vec<String>) -> Result<Self> {
        if x.rows() != labels.len() || x.rows() != subjects.len() {
            return Err(Error::input(format!(
                "{} feature rows, {} labels, {} subject ids",
                x.rows(),
                labels.len(),
                subjects.len()
            )));
        }
        Ok(TaskData { x, labels, subjects })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subject_set(&self) -> BTreeSet<&str> {
        self.subjects.iter().map(String::as_str).collect()
    }
}

/// Fails when any subject occurs in more than one of `parts`.
pub fn assert_subject_disjoint(parts: &[(&str, &[String])]) -> Result<()> {
    for (i, (name_a, a)) in parts.iter().enumerate() {
        let set: BTreeSet<&str> = a.iter().map(String::as_str).collect();
        for (name_b, b) in &parts[i + 1..] {
            if let Some(s) = b.iter().find(|s| set.contains(s.as_str())) {
                return Err(Error::data(format!(
                    "subject {s:?} appears in both {name_a} and {name_b}"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    #[serde(default)]
    pub task: Option<TaskKind>,
    pub config: TaskModelConfig,
    pub pipeline: PreprocessPipeline,
    pub net: ShallowNet,
    pub history: crate::network::TrainingHistory,
    /// Digests of every subject seen in training or validation.
    pub seen_subjects: Vec<String>,
}

pub fn train_task_model(
    train: &TaskData,
    val: Option<&TaskData>,
    config: &TaskModelConfig,
    task: Option<TaskKind>,
) -> Result<TaskModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::input("empty training set"));
    }
    if train.labels.iter().all(|&y| y) || train.labels.iter().all(|&y| !y) {
        return Err(Error::input("training set must contain both classes"));
    }
    if let Some(v) = val {
        assert_subject_disjoint(&[("train", &train.subjects), ("validation", &v.subjects)])?;
    }

    let seed = config.train.seed;
    let pipeline = PreprocessPipeline::fit(&train.x, &config.preprocess)?;
    let mut x = pipeline.transform(&train.x)?;
    let mut y = train.labels.clone();
    if let Some(method) = config.preprocess.oversample {
        let mut rng = substream(seed, OVERSAMPLE_STREAM);
        (x, y) = oversample_minority(&x, &y, method, SMOTE_NEIGHBORS, &mut rng)?;
    }
    let hidden = (config.hidden_layers == 1).then_some(config.hidden_width);
    let mut net = ShallowNet::new(x.cols(), hidden, config.dropout, true, &mut init_rng(seed))?;
    let val_x = match val {
        Some(v) => Some(pipeline.transform(&v.x)?),
        None => None,
    };

    let mut params = std::mem::take(&mut net.params);
    let smoothing = config.train.label_smoothing;
    let history = {
        let shape = net.clone();
        run_training(
            &mut params,
            x.rows(),
            &config.train,
            |tape, bound, idx, rng| {
                let xb = tape.leaf(x.select_rows(idx));
                let p = shape.forward_tape(tape, bound, xb, Some(rng))?;
                tape.bce(p, &labels_f64(&y, idx), smoothing)
            },
            |params| match (&val_x, val) {
                (Some(vx), Some(v)) => {
                    let mut probe = shape.clone();
                    probe.params = params.to_vec();
                    Ok(Some(eval_bce(&probe.predict(vx, None)?, &v.labels)?))
                }
                _ => Ok(None),
            },
        )?
    };
    net.params = params;

    let mut seen: BTreeSet<String> = train.subjects.iter().map(|s| subject_digest(s)).collect();
    if let Some(v) = val {
        seen.extend(v.subjects.iter().map(|s| subject_digest(s)));
    }
    Ok(TaskModel {
        task,
        config: config.clone(),
        pipeline,
        net,
        history,
        seen_subjects: seen.into_iter().collect(),
    })
}

impl TaskModel {
    pub fn input_width(&self) -> usize {
        self.pipeline.input_width
    }

    /// Preprocessed features as fed to the network.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        self.pipeline.transform(x)
    }

    /// Dropout-free probabilities.
    pub fn predict_point(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.predict(&self.transform(x)?, None)?.into_vec())
    }

    /// `rounds` stochastic passes for one feature vector, masks drawn from `rng`.
    pub fn predict_mc(&self, x: &[f64], rounds: usize, rng: &mut Rng) -> Result<McPrediction> {
        if rounds == 0 {
            return Err(Error::config("mc rounds must be at least 1"));
        }
        let z = self.transform(&Matrix::row_vector(x))?;
        if !self.config.is_mc() {
            let p = self.net.predict(&z, None)?.get(0, 0);
            return Ok(McPrediction::point(p, rounds));
        }
        let mut values = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            values.push(self.net.predict(&z, Some(rng))?.get(0, 0));
        }
        Ok(McPrediction::from_rounds(&values))
    }

    /// MC predictions for every row; round `r` uses substream `r` of `seed`,
    /// so the result does not depend on thread scheduling.
    pub fn predict_mc_batch(&self, x: &Matrix, rounds: usize, seed: u64) -> Result<Vec<McPrediction>> {
        if rounds == 0 {
            return Err(Error::config("mc rounds must be at least 1"));
        }
        let z = self.transform(x)?;
        if !self.config.is_mc() {
            let p = self.net.predict(&z, None)?;
            return Ok(p.data().iter().map(|&m| McPrediction::point(m, rounds)).collect());
        }
        mc_batch(z.rows(), rounds, seed, |rng| {
            Ok(self.net.predict(&z, Some(rng))?.into_vec())
        })
    }

    /// MC predictions with the model's configured round count.
    pub fn predict(&self, x: &Matrix, seed: u64) -> Result<Vec<McPrediction>> {
        self.predict_mc_batch(x, self.config.mc_rounds, seed)
    }
}

/// Runs `rounds` stochastic passes over `n` samples and summarises them.
pub(crate) fn mc_batch<F>(n: usize, rounds: usize, seed: u64, pass: F) -> Result<Vec<McPrediction>>
where
    F: Fn(&mut Rng) -> Result<Vec<f64>> + Sync,
{
    let outputs: Vec<Vec<f64>> = (0..rounds)
        .into_par_iter()
        .map(|r| pass(&mut substream(seed, r as u64)))
        .collect::<Result<_>>()?;
    let mut per_sample = vec![0.0; rounds];
    Ok((0..n)
        .map(|i| {
            for (slot, round) in per_sample.iter_mut().zip(&outputs) {
                *slot = round[i];
            }
            McPrediction::from_rounds(&per_sample)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, OptimizerSettings};
    use rand_distr::{Distribution, Normal};

    fn settings(epochs: usize, lr: f64) -> TrainSettings {
        TrainSettings {
            batch_size: 32,
            epochs,
            optimizer: OptimizerSettings::sgd(lr, 0.9),
            scheduler: None,
            seed: 11,
            label_smoothing: 0.0,
        }
    }

    fn separable(n: usize, seed: u64) -> TaskData {
        let mut rng = seeded_rng(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        for i in 0..n {
            let y = i % 2 == 0;
            let c = if y { 1.5 } else { -1.5 };
            rows.push(vec![c + noise.sample(&mut rng), -c + noise.sample(&mut rng)]);
            labels.push(y);
            subjects.push(format!("{seed}-{i}"));
        }
        TaskData::new(Matrix::from_rows(&rows), labels, subjects).unwrap()
    }

    fn config(dropout: f64, hidden: usize) -> TaskModelConfig {
        TaskModelConfig {
            hidden_layers: hidden,
            hidden_width: 8,
            dropout,
            mc_rounds: 1,
            preprocess: PreprocessConfig::default(),
            train: settings(30, 0.1),
        }
    }

    #[test]
    fn labels_use_strict_threshold() {
        let p = |m| McPrediction::point(m, 1);
        assert_eq!(p(0.51).label(0.5), Label::Pd);
        assert_eq!(p(0.50).label(0.5), Label::NonPd);
        assert_eq!(p(0.51).label(0.6), Label::NonPd);
    }

    #[test]
    fn single_round_is_degenerate() {
        let p = McPrediction::from_rounds(&[0.3]);
        assert_eq!((p.std, p.ci_low, p.ci_high), (0.0, 0.3, 0.3));
    }

    #[test]
    fn logistic_model_separates_toy_data() {
        let data = separable(200, 1);
        let model = train_task_model(&data, None, &config(0.0, 0), None).unwrap();
        let probs = model.predict_point(&data.x).unwrap();
        let correct = probs
            .iter()
            .zip(&data.labels)
            .filter(|(p, &y)| (**p > 0.5) == y)
            .count();
        assert!(correct as f64 / 200.0 >= 0.98, "{correct}");
        assert_eq!(model.history.epochs.len(), 30);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(80, 2);
        let a = train_task_model(&data, None, &config(0.2, 1), None).unwrap();
        let b = train_task_model(&data, None, &config(0.2, 1), None).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn zero_dropout_gives_zero_spread() {
        let data = separable(60, 3);
        let model = train_task_model(&data, None, &config(0.0, 1), None).unwrap();
        let preds = model.predict_mc_batch(&data.x, 50, 7).unwrap();
        assert!(preds.iter().all(|p| p.std == 0.0 && p.ci_low == p.ci_high));
        let again = model.predict_mc_batch(&data.x, 1, 8).unwrap();
        for (a, b) in preds.iter().zip(&again) {
            assert_eq!(a.mean, b.mean);
        }
    }

    #[test]
    fn overlapping_subjects_are_refused() {
        let train = separable(40, 4);
        let val = separable(10, 4);
        let err = train_task_model(&train, Some(&val), &config(0.0, 0), None).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn single_class_training_is_refused() {
        let mut data = separable(10, 5);
        data.labels.iter_mut().for_each(|y| *y = true);
        assert!(train_task_model(&data, None, &config(0.0, 0), None).is_err());
    }

    #[test]
    fn exploding_loss_reports_epoch_and_batch() {
        let mut data = separable(40, 6);
        data.x.set(3, 1, f64::NAN);
        let err = train_task_model(&data, None, &config(0.0, 1), None).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mc_mean_is_stable_across_replications() {
        let data = separable(60, 7);
        let mut cfg = config(0.3, 1);
        cfg.train.epochs = 5;
        let model = train_task_model(&data, None, &cfg, None).unwrap();
        let x = data.x.row(0).to_vec();
        let first = model.predict_mc(&x, 1000, &mut seeded_rng(1)).unwrap();
        assert!(first.std > 0.0);
        let rep = model.predict_mc(&x, 10_000, &mut seeded_rng(2)).unwrap();
        let se = first.std / (1000f64).sqrt();
        assert!((first.mean - rep.mean).abs() < 3.0 * se);
        assert!((first.std - rep.std).abs() < 0.1 * rep.std);
    }
}
