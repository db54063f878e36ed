use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::attention::check_eta;
use super::{digest_of, FusionData};
use crate::error::{Error, Result};
use crate::network::{eval_bce, init_rng, labels_f64, run_training, ShallowNet, TrainSettings, TrainingHistory};
use crate::numerics::{check_dropout, dropout_mask, glorot_uniform, substream, Matrix, Rng, Tape, Var, LAYER_NORM_EPS};
use crate::preprocessing::{oversample_minority, OversampleMethod, SMOTE_NEIGHBORS};
use crate::task_model::{assert_subject_disjoint, mc_batch, McPrediction, TaskModel};
use crate::types::{subject_digest, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Head sees only the attended representations.
    Early,
    /// Head also sees each task model's mean probability.
    #[default]
    Hybrid,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(FusionMode::Early),
            "hybrid" => Ok(FusionMode::Hybrid),
            other => Err(Error::config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

fn thirty() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UfnetConfig {
    pub tasks: Vec<TaskKind>,
    pub projection_dim: usize,
    pub qkv_dim: usize,
    pub hidden_width: usize,
    pub dropout: f64,
    pub eta: f64,
    #[serde(default = "thirty")]
    pub mc_rounds: usize,
    #[serde(default)]
    pub mode: FusionMode,
    #[serde(default)]
    pub oversample: Option<OversampleMethod>,
    pub train: TrainSettings,
}

impl UfnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.len() < 2 {
            return Err(Error::config("fusion needs at least two tasks"));
        }
        if self.projection_dim == 0 || self.qkv_dim == 0 || self.hidden_width == 0 {
            return Err(Error::config("fusion layer widths must be positive"));
        }
        if self.mc_rounds == 0 {
            return Err(Error::config("mc rounds must be at least 1"));
        }
        check_dropout(self.dropout)?;
        check_eta(self.eta)?;
        self.train.validate()
    }

    pub fn head_input_width(&self) -> usize {
        let t = self.tasks.len();
        match self.mode {
            FusionMode::Hybrid => t * self.qkv_dim + t,
            FusionMode::Early => t * self.qkv_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UfnetModel {
    pub config: UfnetConfig,
    pub input_widths: Vec<usize>,
    /// Per task `[W, b, gain, shift]`, then `W_Q, W_K, W_V`, then the head's
    /// `[W1, b1, W2, b2]`.
    pub params: Vec<Matrix>,
    #[serde(default)]
    pub history: TrainingHistory,
    /// Digests of the frozen task models this network was trained against.
    #[serde(default)]
    pub task_model_digests: Vec<String>,
    #[serde(default)]
    pub seen_subjects: Vec<String>,
}

pub struct ForwardOutput {
    pub prob: Var,
    pub attention: Var,
}

impl UfnetModel {
    /// Freshly initialised weights for the given per-task input widths.
    pub fn init(config: &UfnetConfig, input_widths: &[usize]) -> Result<Self> {
        config.validate()?;
        if input_widths.len() != config.tasks.len() || input_widths.contains(&0) {
            return Err(Error::config("one positive input width per task is required"));
        }
        let mut rng = init_rng(config.train.seed);
        let d = config.projection_dim;
        let mut params = Vec::new();
        for &w in input_widths {
            params.push(glorot_uniform(w, d, &mut rng));
            params.push(Matrix::zeros(1, d));
            params.push(Matrix::filled(1, d, 1.0));
            params.push(Matrix::zeros(1, d));
        }
        for _ in 0..3 {
            params.push(glorot_uniform(d, config.qkv_dim, &mut rng));
        }
        let head = ShallowNet::new(
            config.head_input_width(),
            Some(config.hidden_width),
            config.dropout,
            false,
            &mut rng,
        )?;
        params.extend(head.params);
        Ok(UfnetModel {
            config: config.clone(),
            input_widths: input_widths.to_vec(),
            params,
            history: TrainingHistory::default(),
            task_model_digests: Vec::new(),
            seen_subjects: Vec::new(),
        })
    }

    fn head_template(&self) -> ShallowNet {
        ShallowNet {
            input_width: self.config.head_input_width(),
            hidden_width: Some(self.config.hidden_width),
            dropout: self.config.dropout,
            input_dropout: false,
            params: Vec::new(),
        }
    }

    fn check_data(&self, data: &FusionData) -> Result<()> {
        if data.tasks != self.config.tasks {
            return Err(Error::input(format!(
                "fusion data has tasks {:?}, model expects {:?}",
                data.tasks, self.config.tasks
            )));
        }
        for (m, &w) in data.features.iter().zip(&self.input_widths) {
            if m.cols() != w {
                return Err(Error::Dimension {
                    op: "ufnet input",
                    left: m.shape(),
                    right: (m.rows(), w),
                });
            }
        }
        Ok(())
    }

    /// Records projection, calibrated attention and head for rows `idx`.
    /// Dropout is active iff `rng` is supplied.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        data: &FusionData,
        idx: &[usize],
        mut rng: Option<&mut Rng>,
    ) -> Result<ForwardOutput> {
        let t = self.config.tasks.len();
        let p = self.config.dropout;
        let mut projected = Vec::with_capacity(t);
        for ti in 0..t {
            let w = &bound[4 * ti..4 * ti + 4];
            let x = tape.leaf(data.features[ti].select_rows(idx));
            let mut h = tape.linear(x, w[0], w[1])?;
            if p > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let (rows, cols) = tape.value(h).shape();
                    h = tape.mask(h, dropout_mask(rows, cols, p, r)?)?;
                }
            }
            h = tape.relu(h);
            projected.push(tape.layer_norm(h, w[2], w[3], LAYER_NORM_EPS)?);
        }
        let tokens = tape.interleave_rows(&projected)?;
        let a = 4 * t;
        let q = tape.matmul(tokens, bound[a])?;
        let k = tape.matmul(tokens, bound[a + 1])?;
        let v = tape.matmul(tokens, bound[a + 2])?;
        let penalty = data.sigma.select_rows(idx).map(|s| self.config.eta * s);
        let attention = tape.attention(q, k, v, &penalty, t)?;
        let flat = tape.reshape(attention, idx.len(), t * self.config.qkv_dim)?;
        let head_in = match self.config.mode {
            FusionMode::Early => flat,
            FusionMode::Hybrid => {
                let mu = tape.leaf(data.mu.select_rows(idx));
                tape.concat_cols(&[flat, mu])?
            }
        };
        let prob = self
            .head_template()
            .forward_tape(tape, &bound[a + 3..], head_in, rng)?;
        Ok(ForwardOutput { prob, attention })
    }

    fn forward_values(&self, data: &FusionData, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut tape = Tape::new();
        let bound: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = self.forward_tape(&mut tape, &bound, data, &idx, rng)?;
        Ok(tape.value(out.prob).data().to_vec())
    }

    /// Dropout-free probabilities.
    pub fn predict_point(&self, data: &FusionData) -> Result<Vec<f64>> {
        self.check_data(data)?;
        self.forward_values(data, None)
    }

    /// MC predictions over `rounds` passes; round `r` uses substream `r` of
    /// `seed` for every dropout mask in that pass.
    pub fn predict_mc(&self, data: &FusionData, rounds: usize, seed: u64) -> Result<Vec<McPrediction>> {
        self.check_data(data)?;
        if rounds == 0 {
            return Err(Error::config("mc rounds must be at least 1"));
        }
        if self.config.dropout == 0.0 {
            let p = self.forward_values(data, None)?;
            return Ok(p.into_iter().map(|m| McPrediction::point(m, rounds)).collect());
        }
        mc_batch(data.len(), rounds, seed, |rng| self.forward_values(data, Some(rng)))
    }

    pub fn predict(&self, data: &FusionData, seed: u64) -> Result<Vec<McPrediction>> {
        self.predict_mc(data, self.config.mc_rounds, seed)
    }

    /// Mean attention each task receives, averaged over sessions and query
    /// rows, from a dropout-free pass.
    pub fn attention_profile(&self, data: &FusionData) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let t = self.config.tasks.len();
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut tape = Tape::new();
        let bound: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = self.forward_tape(&mut tape, &bound, data, &idx, None)?;
        let w = tape.attention_weights(out.attention).expect("attention node");
        let mut mass = vec![0.0; t];
        for (n, a) in w.iter().enumerate() {
            mass[n % t] += a;
        }
        let denom = (data.len() * t) as f64;
        Ok(mass.into_iter().map(|m| m / denom).collect())
    }
}

fn oversample_fusion(data: &FusionData, method: OversampleMethod, seed: u64) -> Result<FusionData> {
    let t = data.num_tasks();
    let mut parts: Vec<&Matrix> = data.features.iter().collect();
    parts.push(&data.mu);
    parts.push(&data.sigma);
    let stacked = Matrix::hstack(&parts)?;
    let mut rng = substream(seed, 2);
    let (x, y) = oversample_minority(&stacked, &data.labels, method, SMOTE_NEIGHBORS, &mut rng)?;
    let mut offset = 0;
    let mut take = |w: usize| {
        let cols: Vec<usize> = (offset..offset + w).collect();
        offset += w;
        x.select_columns(&cols)
    };
    let features = data.features.iter().map(|m| take(m.cols())).collect();
    let mu = take(t);
    let sigma = take(t).map(|s| s.max(0.0));
    let n_new = y.len() - data.len();
    let mut subjects = data.subjects.clone();
    subjects.extend((0..n_new).map(|i| format!("synthetic-{i}")));
    Ok(FusionData {
        tasks: data.tasks.clone(),
        raw: Vec::new(),
        features,
        mu,
        sigma,
        labels: y,
        subjects,
    })
}

/// Trains the fusion network on top of frozen task models.
///
/// `task_models` are only read; their serialized digests are compared
/// before and after training and any difference is reported as a state error.
pub fn train_ufnet(
    train: &FusionData,
    val: Option<&FusionData>,
    config: &UfnetConfig,
    task_models: &[&TaskModel],
) -> Result<UfnetModel> {
    let before: Vec<String> = task_models.iter().map(|m| digest_of(m)).collect::<Result<_>>()?;
    if train.is_empty() {
        return Err(Error::input("no complete training sessions"));
    }
    if train.labels.iter().all(|&y| y) || train.labels.iter().all(|&y| !y) {
        return Err(Error::input("training set must contain both classes"));
    }
    if let Some(v) = val {
        assert_subject_disjoint(&[("train", &train.subjects), ("validation", &v.subjects)])?;
    }
    let widths: Vec<usize> = train.features.iter().map(Matrix::cols).collect();
    let mut model = UfnetModel::init(config, &widths)?;
    model.check_data(train)?;
    if let Some(v) = val {
        model.check_data(v)?;
    }

    let data = match config.oversample {
        Some(method) => oversample_fusion(train, method, config.train.seed)?,
        None => train.clone(),
    };
    let smoothing = config.train.label_smoothing;
    let mut params = std::mem::take(&mut model.params);
    let history = {
        let shape = model.clone();
        run_training(
            &mut params,
            data.len(),
            &config.train,
            |tape, bound, idx, rng| {
                let out = shape.forward_tape(tape, bound, &data, idx, Some(rng))?;
                tape.bce(out.prob, &labels_f64(&data.labels, idx), smoothing)
            },
            |params| match val {
                Some(v) => {
                    let mut probe = shape.clone();
                    probe.params = params.to_vec();
                    let p = probe.forward_values(v, None)?;
                    Ok(Some(eval_bce(&Matrix::column_vector(&p), &v.labels)?))
                }
                None => Ok(None),
            },
        )?
    };
    model.params = params;
    model.history = history;

    let after: Vec<String> = task_models.iter().map(|m| digest_of(m)).collect::<Result<_>>()?;
    if before != after {
        return Err(Error::State("a task model changed during fusion training".into()));
    }
    model.task_model_digests = after;
    let mut seen: BTreeSet<String> = train.subjects.iter().map(|s| subject_digest(s)).collect();
    if let Some(v) = val {
        seen.extend(v.subjects.iter().map(|s| subject_digest(s)));
    }
    model.seen_subjects = seen.into_iter().collect();
    Ok(model)
}
