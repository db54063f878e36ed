use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix};

/// Intermediate quantities of one calibrated attention pass over `T` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// `QKᵀ/√d_qkv`, `T×T`.
    pub scores: Matrix,
    /// `η·σ_j` in every entry of column `j`.
    pub penalty: Matrix,
    /// Row-softmax of `scores − penalty`.
    pub weights: Matrix,
    /// Row `i` is `Σ_j A_ij V_j`.
    pub context: Matrix,
}

pub(crate) fn check_sigma(sigma: &[f64]) -> Result<()> {
    if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(Error::input(format!("task uncertainty {s} must be finite and >= 0")));
    }
    Ok(())
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::config(format!("eta {eta} must be finite and >= 0")));
    }
    Ok(())
}

/// Attention with column `j` of the score matrix lowered by `η·σ_j`.
///
/// `q`, `k`, `v` hold one row per task. Tasks with larger `σ` receive less
/// attention from every other task.
pub fn attend(q: &Matrix, k: &Matrix, v: &Matrix, sigma: &[f64], eta: f64) -> Result<AttentionTrace> {
    check_sigma(sigma)?;
    check_eta(eta)?;
    let t = q.rows();
    if k.shape() != q.shape() || v.rows() != t || sigma.len() != t || q.cols() == 0 {
        return Err(Error::Dimension {
            op: "calibrated_attention",
            left: q.shape(),
            right: (sigma.len(), k.cols()),
        });
    }
    let mut scores = q.matmul_nt(k)?;
    scores.scale_in_place(1.0 / (q.cols() as f64).sqrt());
    let mut penalty = Matrix::zeros(t, t);
    for i in 0..t {
        for (j, s) in sigma.iter().enumerate() {
            penalty.set(i, j, eta * s);
        }
    }
    let weights = softmax_rows(&scores.zip_map(&penalty, |s, p| s - p));
    let context = weights.matmul(v)?;
    Ok(AttentionTrace {
        scores,
        penalty,
        weights,
        context,
    })
}

/// Projects `x_p` (`T×d`) to queries, keys and values, then attends.
pub fn calibrated_attention(
    x_p: &Matrix,
    sigma: &[f64],
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
    eta: f64,
) -> Result<AttentionTrace> {
    attend(&x_p.matmul(w_q)?, &x_p.matmul(w_k)?, &x_p.matmul(w_v)?, sigma, eta)
}
