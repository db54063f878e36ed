//! Shallow sigmoid-output network and the shared minibatch training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    dropout_mask, glorot_uniform, relu, seeded_rng, sigmoid, substream, Matrix, Optimizer,
    OptimizerSettings, Rng, Scheduler, SchedulerSettings, Tape, Var,
};

/// One or two linear layers ending in a single sigmoid unit.
///
/// Dropout is applied before every linear layer when `input_dropout` is set,
/// otherwise only before the output layer of a one-hidden-layer net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowNet {
    pub input_width: usize,
    pub hidden_width: Option<usize>,
    pub dropout: f64,
    pub input_dropout: bool,
    /// `[W1, b1]` or `[W1, b1, W2, b2]`; weights are `fan_in × fan_out`.
    pub params: Vec<Matrix>,
}

impl ShallowNet {
    pub fn new(
        input_width: usize,
        hidden_width: Option<usize>,
        dropout: f64,
        input_dropout: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        crate::numerics::check_dropout(dropout)?;
        if input_width == 0 || hidden_width == Some(0) {
            return Err(Error::config("network layers need positive width"));
        }
        let params = match hidden_width {
            None => vec![glorot_uniform(input_width, 1, rng), Matrix::zeros(1, 1)],
            Some(h) => vec![
                glorot_uniform(input_width, h, rng),
                Matrix::zeros(1, h),
                glorot_uniform(h, 1, rng),
                Matrix::zeros(1, 1),
            ],
        };
        Ok(ShallowNet {
            input_width,
            hidden_width,
            dropout,
            input_dropout,
            params,
        })
    }

    fn drop_input(&self) -> bool {
        self.dropout > 0.0 && (self.input_dropout || self.hidden_width.is_none())
    }

    /// Records the forward pass; `params` are this net's bound parameters.
    /// Dropout masks are drawn from `rng` when one is supplied.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let mut h = x;
        if self.drop_input() {
            if let Some(r) = rng.as_deref_mut() {
                let (rows, cols) = tape.value(h).shape();
                h = tape.mask(h, dropout_mask(rows, cols, self.dropout, r)?)?;
            }
        }
        h = tape.linear(h, params[0], params[1])?;
        if self.hidden_width.is_some() {
            h = tape.relu(h);
            if self.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let (rows, cols) = tape.value(h).shape();
                    h = tape.mask(h, dropout_mask(rows, cols, self.dropout, r)?)?;
                }
            }
            h = tape.linear(h, params[2], params[3])?;
        }
        Ok(tape.sigmoid(h))
    }

    /// Direct forward returning a `b×1` probability column.
    pub fn predict(&self, x: &Matrix, mut rng: Option<&mut Rng>) -> Result<Matrix> {
        if x.cols() != self.input_width {
            return Err(Error::Dimension {
                op: "shallow_net",
                left: x.shape(),
                right: (1, self.input_width),
            });
        }
        let mut h = x.clone();
        if self.drop_input() {
            if let Some(r) = rng.as_deref_mut() {
                let m = dropout_mask(h.rows(), h.cols(), self.dropout, r)?;
                h = h.zip_map(&m, |a, b| a * b);
            }
        }
        h = affine(&h, &self.params[0], &self.params[1])?;
        if self.hidden_width.is_some() {
            h = h.map(relu);
            if self.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    let m = dropout_mask(h.rows(), h.cols(), self.dropout, r)?;
                    h = h.zip_map(&m, |a, b| a * b);
                }
            }
            h = affine(&h, &self.params[2], &self.params[3])?;
        }
        Ok(h.map(sigmoid))
    }
}

pub(crate) fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    for r in 0..out.rows() {
        for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub scheduler: Option<SchedulerSettings>,
    pub seed: u64,
    #[serde(default)]
    pub label_smoothing: f64,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be positive"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::config("label smoothing must be in [0, 0.5)"));
        }
        if let Some(s) = &self.scheduler {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default)]
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

const SHUFFLE_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1;

/// Minibatch gradient descent over `n` samples.
///
/// `batch_loss` records the loss of one minibatch on a fresh tape given the
/// bound parameters; `val_loss` is only consulted by plateau scheduling.
pub(crate) fn run_training<F, V>(
    params: &mut [Matrix],
    n: usize,
    settings: &TrainSettings,
    mut batch_loss: F,
    mut val_loss: V,
) -> Result<TrainingHistory>
where
    F: FnMut(&mut Tape, &[Var], &[usize], &mut Rng) -> Result<Var>,
    V: FnMut(&[Matrix]) -> Result<Option<f64>>,
{
    settings.validate()?;
    if n == 0 {
        return Err(Error::input("no training samples"));
    }
    let mut shuffle_rng = substream(settings.seed, SHUFFLE_STREAM);
    let mut dropout_rng = substream(settings.seed, DROPOUT_STREAM);
    let mut optimizer = Optimizer::new(settings.optimizer, params);
    let mut scheduler = settings.scheduler.map(Scheduler::new).transpose()?;
    let needs_val = matches!(
        settings.scheduler,
        Some(SchedulerSettings::ReduceOnPlateau { .. })
    );
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..settings.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (batch_no, batch) in order.chunks(settings.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let loss = batch_loss(&mut tape, &bound, batch, &mut dropout_rng)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {} batch {batch_no}",
                    epoch + 1
                )));
            }
            total += value * batch.len() as f64;
            let mut grads = tape.backward(loss);
            let grads: Vec<Matrix> = bound.iter().map(|&v| grads.take(v)).collect();
            optimizer.step(params, &grads).map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("epoch {} batch {batch_no}: {msg}", epoch + 1))
                }
                other => other,
            })?;
        }
        let val = if needs_val { val_loss(params)? } else { None };
        let lr = optimizer.lr();
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: total / n as f64,
            val_loss: val,
            lr,
        });
        if let Some(s) = scheduler.as_mut() {
            optimizer.set_lr(s.end_epoch(lr, val));
        }
    }
    Ok(history)
}

/// Mean BCE of a deterministic (dropout-free) forward.
pub(crate) fn eval_bce(probs: &Matrix, labels: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(probs.clone());
    let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let l = tape.bce(p, &y, 0.0)?;
    Ok(tape.value(l).get(0, 0))
}

pub(crate) fn labels_f64(labels: &[bool], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| if labels[i] { 1.0 } else { 0.0 }).collect()
}

pub(crate) fn init_rng(seed: u64) -> Rng {
    seeded_rng(seed ^ 0x5eed_1a7e_u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn flat(params: &[Matrix]) -> Vec<f64> {
        params.iter().flat_map(|p| p.data().to_vec()).collect()
    }

    fn unflat(template: &[Matrix], values: &[f64]) -> Vec<Matrix> {
        let mut off = 0;
        template
            .iter()
            .map(|p| {
                let m = Matrix::from_vec(p.rows(), p.cols(), values[off..off + p.len()].to_vec())
                    .unwrap();
                off += p.len();
                m
            })
            .collect()
    }

    #[test]
    fn forward_tape_matches_direct_predict() {
        let mut rng = seeded_rng(3);
        let net = ShallowNet::new(4, Some(5), 0.3, true, &mut rng).unwrap();
        let x = glorot_uniform(6, 4, &mut rng);
        let direct = net.predict(&x, Some(&mut seeded_rng(9))).unwrap();
        let mut tape = Tape::new();
        let bound: Vec<Var> = net.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let xv = tape.leaf(x);
        let out = net
            .forward_tape(&mut tape, &bound, xv, Some(&mut seeded_rng(9)))
            .unwrap();
        assert!(tape.value(out).max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn net_plus_bce_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(4);
        let net = ShallowNet::new(3, Some(4), 0.0, false, &mut rng).unwrap();
        let x = glorot_uniform(8, 3, &mut rng).map(|v| 3.0 * v);
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let template = net.params.clone();
        let f = |theta: &[f64]| {
            let params = unflat(&template, theta);
            let mut tape = Tape::new();
            let bound: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let xv = tape.leaf(x.clone());
            let p = net.forward_tape(&mut tape, &bound, xv, None).unwrap();
            let l = tape.bce(p, &y, 0.1).unwrap();
            let g = tape.backward(l);
            let grad = bound.iter().flat_map(|&v| g.get(v).into_vec()).collect();
            (tape.value(l).get(0, 0), grad)
        };
        let err = grad_check(f, &flat(&template), 1e-5);
        assert!(err < 1e-4, "{err}");
    }
}
