//! Dense matrix kernel, gradient tape, optimizers and schedulers.

pub mod gradcheck;
pub mod matrix;
pub mod optim;
pub mod schedule;
pub mod tape;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use gradcheck::grad_check;
pub use matrix::Matrix;
pub use optim::{Optimizer, OptimizerKind, OptimizerSettings};
pub use schedule::{Scheduler, SchedulerSettings};
pub use tape::{relu, sigmoid, softmax_rows, Gradients, Tape, Var};

pub type Rng = ChaCha8Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} not in [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Result<Matrix> {
    check_dropout(p)?;
    if p == 0.0 {
        return Ok(Matrix::filled(rows, cols, 1.0));
    }
    let keep = 1.0 / (1.0 - p);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < p { 0.0 } else { keep };
    }
    Ok(m)
}

/// Applies inverted dropout when `active`; identity otherwise.
pub fn dropout_forward(x: &Matrix, p: f64, rng: &mut Rng, active: bool) -> Result<Matrix> {
    check_dropout(p)?;
    if !active || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.rows(), x.cols(), p, rng)?;
    Ok(x.zip_map(&mask, |a, m| a * m))
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut m = Matrix::zeros(fan_in, fan_out);
    for v in m.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    m
}
