//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! Only the layer set needed by the shallow networks and the fusion model is
//! supported. Nodes are appended in forward order and `backward` walks them in
//! exact reverse, so a node's gradient is complete before it is propagated.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Mask(Var, Matrix),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    Interleave(Vec<Var>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        tokens: usize,
        scale: f64,
        weights: Vec<f64>,
    },
    Bce {
        p: Var,
        targets: Vec<f64>,
        clamped: Vec<bool>,
    },
    WeightedSum(Var, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; unreached nodes read as zero.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `1×q` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Dimension {
                op: "add_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x·W + b`
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(relu);
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Elementwise multiply by a constant mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Matrix) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(Error::Dimension {
                op: "mask",
                left: xv.shape(),
                right: mask.shape(),
            });
        }
        let out = xv.zip_map(&mask, |a, m| a * m);
        Ok(self.push(out, Op::Mask(x, mask)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (gv, sv) = (self.value(gain), self.value(shift));
        let d = xv.cols();
        if gv.shape() != (1, d) || sv.shape() != (1, d) {
            return Err(Error::Dimension {
                op: "layer_norm",
                left: xv.shape(),
                right: gv.shape(),
            });
        }
        let mut xhat = Matrix::zeros(xv.rows(), d);
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Matrix::zeros(xv.rows(), d);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * gv.data()[c] + sv.data()[c]);
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Stacks `T` matrices of shape `b×d` into a `(b·T)×d` token matrix with
    /// row `s·T + t` taken from row `s` of input `t`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape();
        for &p in parts {
            if self.value(p).shape() != first {
                return Err(Error::Dimension {
                    op: "interleave_rows",
                    left: first,
                    right: self.value(p).shape(),
                });
            }
        }
        let (b, d) = first;
        let t = parts.len();
        let mut out = Matrix::zeros(b * t, d);
        for s in 0..b {
            for (ti, &p) in parts.iter().enumerate() {
                out.row_mut(s * t + ti).copy_from_slice(self.value(p).row(s));
            }
        }
        Ok(self.push(out, Op::Interleave(parts.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshape(rows, cols)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hstack(&mats)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Single-head attention within groups of `tokens` consecutive rows.
    ///
    /// `q`, `k`, `v` are `(b·T)×d_k`; `penalty` is `b×T` and is subtracted
    /// from column `j` of each group's score matrix before the row softmax.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        penalty: &Matrix,
        tokens: usize,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.rows() != vv.rows() {
            return Err(Error::Dimension {
                op: "attention",
                left: qv.shape(),
                right: kv.shape(),
            });
        }
        if tokens == 0 || qv.rows() % tokens != 0 || penalty.shape() != (qv.rows() / tokens, tokens)
        {
            return Err(Error::Dimension {
                op: "attention penalty",
                left: (qv.rows(), tokens),
                right: penalty.shape(),
            });
        }
        let scale = 1.0 / (qv.cols() as f64).sqrt();
        let b = qv.rows() / tokens;
        let dv = vv.cols();
        let mut weights = vec![0.0; b * tokens * tokens];
        let mut out = Matrix::zeros(qv.rows(), dv);
        for s in 0..b {
            for i in 0..tokens {
                let qi = qv.row(s * tokens + i);
                let w = &mut weights[(s * tokens + i) * tokens..(s * tokens + i + 1) * tokens];
                for j in 0..tokens {
                    w[j] = dot(qi, kv.row(s * tokens + j)) * scale - penalty.get(s, j);
                }
                softmax_in_place(w);
                let z = out.row_mut(s * tokens + i);
                for j in 0..tokens {
                    for (zc, vc) in z.iter_mut().zip(vv.row(s * tokens + j)) {
                        *zc += w[j] * vc;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                tokens,
                scale,
                weights,
            },
        ))
    }

    /// Attention weights cached by an attention node, `b·T·T` row-major.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Mean binary cross-entropy against smoothed targets
    /// `y(1-ε) + (1-y)ε`. `p` must be `b×1`.
    pub fn bce(&mut self, p: Var, labels: &[f64], smoothing: f64) -> Result<Var> {
        let pv = self.value(p);
        if pv.cols() != 1 || pv.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "bce",
                left: pv.shape(),
                right: (labels.len(), 1),
            });
        }
        if labels.is_empty() {
            return Err(Error::input("empty batch in bce loss"));
        }
        let targets: Vec<f64> = labels
            .iter()
            .map(|&y| y * (1.0 - smoothing) + (1.0 - y) * smoothing)
            .collect();
        let mut clamped = Vec::with_capacity(labels.len());
        let mut total = 0.0;
        for (&p, &t) in pv.data().iter().zip(&targets) {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            clamped.push(pc != p);
            total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::Bce {
                p,
                targets,
                clamped,
            },
        ))
    }

    /// `Σ x ⊙ w` as a `1×1` scalar.
    pub fn weighted_sum(&mut self, x: Var, w: Matrix) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != w.shape() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: xv.shape(),
                right: w.shape(),
            });
        }
        let s = dot(xv.data(), w.data());
        Ok(self.push(Matrix::filled(1, 1, s), Op::WeightedSum(x, w)))
    }

    /// Backpropagates from a `1×1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads[output.0] = Some(Matrix::filled(
            self.nodes[output.0].value.rows(),
            self.nodes[output.0].value.cols(),
            1.0,
        ));

        fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = g.matmul_nt(bv).expect("matmul grad shape");
                    let gb = av.matmul_tn(&g).expect("matmul grad shape");
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = g.zip_map(xv, |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, |g, s| g * s * (1.0 - s));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mask(x, mask) => {
                    let gx = g.zip_map(mask, |g, m| g * m);
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let gv = &self.nodes[gain.0].value;
                    let d = g.cols();
                    let mut ggain = Matrix::zeros(1, d);
                    let mut gshift = Matrix::zeros(1, d);
                    let mut gx = Matrix::zeros(g.rows(), d);
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut dh = vec![0.0; d];
                        for c in 0..d {
                            ggain.data_mut()[c] += gr[c] * hr[c];
                            gshift.data_mut()[c] += gr[c];
                            dh[c] = gr[c] * gv.data()[c];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h = dot(&dh, hr) / d as f64;
                        let out = gx.row_mut(r);
                        for c in 0..d {
                            out[c] = inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *shift, gshift);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let s = &node.value;
                    let mut gx = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let (sr, gr) = (s.row(r), g.row(r));
                        let inner = dot(sr, gr);
                        for (o, (sv, gv)) in gx.row_mut(r).iter_mut().zip(sr.iter().zip(gr)) {
                            *o = sv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Interleave(parts) => {
                    let t = parts.len();
                    let b = g.rows() / t;
                    for (ti, &p) in parts.iter().enumerate() {
                        let mut gp = Matrix::zeros(b, g.cols());
                        for s in 0..b {
                            gp.row_mut(s).copy_from_slice(g.row(s * t + ti));
                        }
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::Reshape(x) => {
                    let (r, c) = self.nodes[x.0].value.shape();
                    accumulate(&mut grads, *x, g.reshape(r, c).expect("reshape grad"));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.nodes[p.0].value.cols();
                        let idx: Vec<usize> = (offset..offset + width).collect();
                        accumulate(&mut grads, p, g.select_columns(&idx));
                        offset += width;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    tokens,
                    scale,
                    weights,
                } => {
                    let t = *tokens;
                    let (qv, kv, vv) = (
                        &self.nodes[q.0].value,
                        &self.nodes[k.0].value,
                        &self.nodes[v.0].value,
                    );
                    let mut gq = Matrix::zeros(qv.rows(), qv.cols());
                    let mut gk = Matrix::zeros(kv.rows(), kv.cols());
                    let mut gvv = Matrix::zeros(vv.rows(), vv.cols());
                    let b = qv.rows() / t;
                    let mut da = vec![0.0; t];
                    for s in 0..b {
                        for i in 0..t {
                            let row = s * t + i;
                            let w = &weights[row * t..(row + 1) * t];
                            let gz = g.row(row);
                            for j in 0..t {
                                da[j] = dot(gz, vv.row(s * t + j));
                                for (o, gzc) in gvv.row_mut(s * t + j).iter_mut().zip(gz) {
                                    *o += w[j] * gzc;
                                }
                            }
                            let inner = dot(w, &da);
                            for j in 0..t {
                                let ds = w[j] * (da[j] - inner) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = kv.row(s * t + j).to_vec();
                                for (o, kc) in gq.row_mut(row).iter_mut().zip(&kj) {
                                    *o += ds * kc;
                                }
                                let qi = qv.row(row).to_vec();
                                for (o, qc) in gk.row_mut(s * t + j).iter_mut().zip(&qi) {
                                    *o += ds * qc;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gvv);
                }
                Op::Bce {
                    p,
                    targets,
                    clamped,
                } => {
                    let pv = &self.nodes[p.0].value;
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let data = pv
                        .data()
                        .iter()
                        .zip(targets)
                        .zip(clamped)
                        .map(|((&p, &t), &c)| {
                            if c {
                                0.0
                            } else {
                                scale * (-t / p + (1.0 - t) / (1.0 - p))
                            }
                        })
                        .collect();
                    let gp = Matrix::from_vec(pv.rows(), 1, data).expect("bce grad shape");
                    accumulate(&mut grads, *p, gp);
                }
                Op::WeightedSum(x, w) => {
                    let mut gx = w.clone();
                    gx.scale_in_place(g.get(0, 0));
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Gradients { grads, shapes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_zero_input() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_rows(&[[1.0, 2.0]]));
        let w = t.leaf(Matrix::identity(2));
        let b = t.leaf(Matrix::row_vector(&[0.0, 0.0]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);

        let x0 = t.leaf(Matrix::zeros(1, 2));
        let w2 = t.leaf(Matrix::from_rows(&[[0.3, -7.0], [2.0, 5.0]]));
        let b2 = t.leaf(Matrix::row_vector(&[3.0, -1.0]));
        let y0 = t.linear(x0, w2, b2).unwrap();
        assert_eq!(t.value(y0).data(), &[3.0, -1.0]);
    }

    #[test]
    fn linear_shape_mismatch_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(1, 3));
        let w = t.leaf(Matrix::zeros(2, 2));
        let err = t.matmul(x, w).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn activations() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(500.0) <= 1.0 && sigmoid(500.0) > 0.999);
        assert!(sigmoid(-500.0) >= 0.0);
        // e^-500 is representable: sigmoid(-500) ≈ 7.1245764067412855e-218
        let expect = 7.124_576_406_741_286e-218;
        assert!(((sigmoid(-500.0) - expect) / expect).abs() < 1e-12);
        assert!((1.0 - sigmoid(500.0)).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_two_point_and_constant_row() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_rows(&[[1.0, 3.0], [5.0, 5.0]]));
        let g = t.leaf(Matrix::row_vector(&[1.0, 1.0]));
        let s = t.leaf(Matrix::row_vector(&[0.0, 0.0]));
        let y = t.layer_norm(x, g, s, 1e-12).unwrap();
        let v = t.value(y);
        assert!((v.get(0, 0) + 1.0).abs() < 1e-9 && (v.get(0, 1) - 1.0).abs() < 1e-9);
        assert_eq!(v.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let m = Matrix::from_rows(&[[1e4, -1e4, 0.0], [1e4, 1e4, 1e4]]);
        let s = softmax_rows(&m);
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((s.get(1, 2) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bce_values() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::column_vector(&[0.5]));
        let l = t.bce(p, &[1.0], 0.0).unwrap();
        assert!((t.value(l).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-15);

        let p = t.leaf(Matrix::column_vector(&[1.0, 0.0]));
        let l = t.bce(p, &[1.0, 0.0], 0.0).unwrap();
        assert!(t.value(l).get(0, 0) < 1e-6);

        let p = t.leaf(Matrix::zeros(0, 1));
        assert!(t.bce(p, &[], 0.0).is_err());
    }

    #[test]
    fn bce_matches_expanded_formula_with_smoothing() {
        let ps = [0.13, 0.77, 0.5, 0.92];
        let ys = [0.0, 1.0, 1.0, 0.0];
        let eps = 0.1;
        let mut t = Tape::new();
        let p = t.leaf(Matrix::column_vector(&ps));
        let l = t.bce(p, &ys, eps).unwrap();
        let mut expect = 0.0;
        for i in 0..4 {
            let yt = if ys[i] == 1.0 { 0.9 } else { 0.1 };
            expect += -(yt * f64::ln(ps[i]) + (1.0 - yt) * f64::ln(1.0 - ps[i]));
        }
        expect /= 4.0;
        assert!((t.value(l).get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn unused_nodes_have_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let unused = t.leaf(Matrix::row_vector(&[3.0]));
        let s = t.weighted_sum(a, Matrix::row_vector(&[1.0, 1.0])).unwrap();
        let g = t.backward(s);
        assert_eq!(g.get(unused).data(), &[0.0]);
        assert_eq!(g.get(a).data(), &[1.0, 1.0]);
    }
}
