//! Feature pruning, scaling and minority oversampling.
//!
//! Everything here is fit on the training split only; a fitted
//! [`PreprocessPipeline`] is immutable and applied unchanged to validation and
//! test data.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    /// z-score per column
    Standard,
    /// `(x - min) / (max - min)` per column
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OversampleMethod {
    Random,
    Smote,
}

impl FromStr for OversampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        match norm.as_str() {
            "random" | "randomoversampler" => Ok(OversampleMethod::Random),
            "smote" => Ok(OversampleMethod::Smote),
            "svmsmote" | "adasyn" | "borderlinesmote" | "boarderlinesmote" | "smoten" => {
                info!("oversampling method {s:?} runs as plain SMOTE");
                Ok(OversampleMethod::Smote)
            }
            _ => Err(Error::config(format!("unknown oversampling method {s:?}"))),
        }
    }
}

impl TryFrom<String> for OversampleMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OversampleMethod> for String {
    fn from(m: OversampleMethod) -> String {
        m.to_string()
    }
}

impl fmt::Display for OversampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OversampleMethod::Random => "random",
            OversampleMethod::Smote => "smote",
        })
    }
}

pub const SMOTE_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Correlation threshold; `None` keeps every column.
    #[serde(default)]
    pub drop_correlated: Option<f64>,
    #[serde(default)]
    pub scaling: Option<ScalerKind>,
    #[serde(default)]
    pub oversample: Option<OversampleMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScaler {
    pub kind: ScalerKind,
    /// Column mean (standard) or minimum (min-max).
    pub offset: Vec<f64>,
    /// Column std (standard) or range (min-max); zero means constant column.
    pub spread: Vec<f64>,
}

impl FittedScaler {
    pub fn fit(x: &Matrix, kind: ScalerKind) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::input("cannot fit a scaler on zero rows"));
        }
        let n = x.rows() as f64;
        let mut offset = Vec::with_capacity(x.cols());
        let mut spread = Vec::with_capacity(x.cols());
        for c in 0..x.cols() {
            let col = x.column(c);
            match kind {
                ScalerKind::Standard => {
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    offset.push(mean);
                    spread.push(var.sqrt());
                }
                ScalerKind::MinMax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    offset.push(lo);
                    spread.push(hi - lo);
                }
            }
        }
        Ok(FittedScaler {
            kind,
            offset,
            spread,
        })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.offset.len() {
            return Err(Error::Dimension {
                op: "apply_scaler",
                left: x.shape(),
                right: (1, self.offset.len()),
            });
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let s = self.spread[c];
                *v = if s > 0.0 { (*v - self.offset[c]) / s } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Inverse transform; constant columns map back to their offset.
    pub fn invert(&self, z: &Matrix) -> Matrix {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.spread[c] + self.offset[c];
            }
        }
        out
    }
}

fn centered_columns(x: &Matrix) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut cols = Vec::with_capacity(x.cols());
    let mut norms = Vec::with_capacity(x.cols());
    for c in 0..x.cols() {
        let mut col = x.column(c);
        let mean = col.iter().sum::<f64>() / n;
        for v in &mut col {
            *v -= mean;
        }
        norms.push(col.iter().map(|v| v * v).sum::<f64>().sqrt());
        cols.push(col);
    }
    (cols, norms)
}

/// Pearson correlation; zero when either column is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa.sqrt() * sbb.sqrt())
    }
}

/// Greedy left-to-right scan: column `j` is dropped iff its absolute Pearson
/// correlation with some already-kept earlier column exceeds `threshold`.
pub fn fit_correlation_filter(x: &Matrix, threshold: f64) -> Result<Vec<usize>> {
    if x.rows() < 2 {
        return Err(Error::input("correlation filter needs at least 2 rows"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::config(format!(
            "correlation threshold {threshold} not in (0, 1]"
        )));
    }
    let (cols, norms) = centered_columns(x);
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..x.cols() {
        let redundant = norms[j] > 0.0
            && kept.iter().any(|&k| {
                if norms[k] == 0.0 {
                    return false;
                }
                let r: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum::<f64>()
                    / (norms[j] * norms[k]);
                r.abs() > threshold
            });
        if !redundant {
            kept.push(j);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPipeline {
    pub config: PreprocessConfig,
    pub input_width: usize,
    pub kept: Vec<usize>,
    pub scaler: Option<FittedScaler>,
}

impl PreprocessPipeline {
    pub fn fit(x: &Matrix, config: &PreprocessConfig) -> Result<Self> {
        let kept = match config.drop_correlated {
            Some(t) => fit_correlation_filter(x, t)?,
            None => (0..x.cols()).collect(),
        };
        let scaler = match config.scaling {
            Some(kind) => Some(FittedScaler::fit(&x.select_columns(&kept), kind)?),
            None => None,
        };
        Ok(PreprocessPipeline {
            config: config.clone(),
            input_width: x.cols(),
            kept,
            scaler,
        })
    }

    pub fn output_width(&self) -> usize {
        self.kept.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_width {
            return Err(Error::Dimension {
                op: "preprocess",
                left: x.shape(),
                right: (1, self.input_width),
            });
        }
        let selected = if self.kept.len() == self.input_width {
            x.clone()
        } else {
            x.select_columns(&self.kept)
        };
        match &self.scaler {
            Some(s) => s.apply(&selected),
            None => Ok(selected),
        }
    }
}

/// Upsamples the minority class to the majority count.
///
/// Originals are returned first and unmodified; synthetic rows are appended.
pub fn oversample_minority(
    x: &Matrix,
    y: &[bool],
    method: OversampleMethod,
    k: usize,
    rng: &mut Rng,
) -> Result<(Matrix, Vec<bool>)> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            op: "oversample",
            left: x.shape(),
            right: (y.len(), 1),
        });
    }
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::input("oversampling needs both classes present"));
    }
    let (minority, label) = if pos.len() < neg.len() {
        (pos, true)
    } else {
        (neg, false)
    };
    let needed = y.len() - 2 * minority.len();
    if needed == 0 {
        return Ok((x.clone(), y.to_vec()));
    }
    let mut method = method;
    if method == OversampleMethod::Smote && minority.len() <= k {
        warn!(
            "SMOTE needs more than {k} minority rows, found {}; using random oversampling",
            minority.len()
        );
        method = OversampleMethod::Random;
    }

    let mut synthetic = Vec::with_capacity(needed * x.cols());
    match method {
        OversampleMethod::Random => {
            for _ in 0..needed {
                let i = minority[rng.random_range(0..minority.len())];
                synthetic.extend_from_slice(x.row(i));
            }
        }
        OversampleMethod::Smote => {
            let neighbors = nearest_within(x, &minority, k);
            for _ in 0..needed {
                let a = rng.random_range(0..minority.len());
                let b = neighbors[a][rng.random_range(0..k)];
                let u: f64 = rng.random();
                let (xa, xb) = (x.row(minority[a]), x.row(minority[b]));
                synthetic.extend(xa.iter().zip(xb).map(|(p, q)| p + u * (q - p)));
            }
        }
    }
    let mut data = x.data().to_vec();
    data.extend(synthetic);
    let out = Matrix::from_vec(x.rows() + needed, x.cols(), data)?;
    let mut labels = y.to_vec();
    labels.extend(std::iter::repeat_n(label, needed));
    Ok((out, labels))
}

/// For each member of `group`, indices (into `group`) of its `k` nearest
/// other members by Euclidean distance; ties broken by index.
fn nearest_within(x: &Matrix, group: &[usize], k: usize) -> Vec<Vec<usize>> {
    group
        .iter()
        .enumerate()
        .map(|(a, &ia)| {
            let mut d: Vec<(f64, usize)> = group
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(b, &ib)| {
                    let dist: f64 = x
                        .row(ia)
                        .iter()
                        .zip(x.row(ib))
                        .map(|(p, q)| (p - q).powi(2))
                        .sum();
                    (dist, b)
                })
                .collect();
            d.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)));
            d.into_iter().take(k).map(|(_, b)| b).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Exhaustive pairwise correlations replayed with the greedy keep rule.
    fn brute_force_filter(x: &Matrix, threshold: f64) -> Vec<usize> {
        let cols: Vec<Vec<f64>> = (0..x.cols()).map(|c| x.column(c)).collect();
        let mut corr = vec![vec![0.0; x.cols()]; x.cols()];
        for i in 0..x.cols() {
            for j in 0..x.cols() {
                corr[i][j] = pearson(&cols[i], &cols[j]);
            }
        }
        let mut kept = vec![];
        for j in 0..x.cols() {
            if kept.iter().all(|&k: &usize| corr[j][k].abs() <= threshold) {
                kept.push(j);
            }
        }
        kept
    }

    #[test]
    fn identical_columns_drop_second() {
        let x = Matrix::from_rows(&[[1.0, 1.0, 0.3], [2.0, 2.0, -1.0], [4.0, 4.0, 0.9]]);
        assert_eq!(fit_correlation_filter(&x, 0.95).unwrap(), vec![0, 2]);
    }

    #[test]
    fn threshold_one_keeps_everything() {
        let x = random_matrix(40, 7, 2);
        assert_eq!(fit_correlation_filter(&x, 1.0).unwrap(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn constant_column_never_triggers_drops() {
        let x = Matrix::from_rows(&[[5.0, 1.0, 1.0], [5.0, 2.0, 2.0], [5.0, 3.0, 3.0]]);
        assert_eq!(fit_correlation_filter(&x, 0.9).unwrap(), vec![0, 1]);
    }

    #[test]
    fn structured_correlations_match_brute_force() {
        // columns: a, a+small noise, b, -b + noise, c, a+b
        let base = random_matrix(200, 6, 3);
        let mut x = Matrix::zeros(200, 6);
        for r in 0..200 {
            let z = base.row(r);
            let row = [
                z[0],
                z[0] + 0.1 * z[1],
                z[2],
                -z[2] + 0.3 * z[3],
                z[4],
                z[0] + z[2],
            ];
            x.row_mut(r).copy_from_slice(&row);
        }
        for t in [0.5, 0.8, 0.85, 0.9, 0.95] {
            assert_eq!(
                fit_correlation_filter(&x, t).unwrap(),
                brute_force_filter(&x, t),
                "threshold {t}"
            );
        }
    }

    #[test]
    fn filter_rejects_bad_input() {
        assert!(fit_correlation_filter(&Matrix::zeros(1, 3), 0.9).is_err());
        assert!(fit_correlation_filter(&Matrix::zeros(3, 3), 0.0).is_err());
    }

    #[test]
    fn scaler_examples() {
        let x = Matrix::column_vector(&[2.0, 4.0]);
        let z = FittedScaler::fit(&x, ScalerKind::Standard).unwrap();
        assert_eq!(z.apply(&x).unwrap().data(), &[-1.0, 1.0]);
        let m = FittedScaler::fit(&x, ScalerKind::MinMax).unwrap();
        assert_eq!(m.apply(&x).unwrap().data(), &[0.0, 1.0]);
        // out-of-range test values are not clipped
        assert_eq!(m.apply(&Matrix::column_vector(&[6.0])).unwrap().data(), &[2.0]);
    }

    #[test]
    fn zero_variance_columns_scale_to_zero() {
        let x = Matrix::from_rows(&[[3.0, 1.0], [3.0, 2.0]]);
        for kind in [ScalerKind::Standard, ScalerKind::MinMax] {
            let s = FittedScaler::fit(&x, kind).unwrap();
            let out = s.apply(&x).unwrap();
            assert_eq!(out.column(0), vec![0.0, 0.0]);
            assert!(out.is_finite());
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean() {
        let x = random_matrix(50, 10, 4).map(|v| 3.0 * v + 7.0);
        let out = FittedScaler::fit(&x, ScalerKind::Standard)
            .unwrap()
            .apply(&x)
            .unwrap();
        for c in 0..10 {
            let mean = out.column(c).iter().sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn pipeline_roundtrips_through_inverse() {
        let x = random_matrix(30, 5, 5).map(|v| v * 4.0 - 1.0);
        for kind in [ScalerKind::Standard, ScalerKind::MinMax] {
            let cfg = PreprocessConfig {
                scaling: Some(kind),
                ..Default::default()
            };
            let p = PreprocessPipeline::fit(&x, &cfg).unwrap();
            let back = p.scaler.as_ref().unwrap().invert(&p.transform(&x).unwrap());
            assert!(back.max_abs_diff(&x) < 1e-9);
        }
    }

    #[test]
    fn pipeline_checks_width() {
        let x = random_matrix(10, 3, 6);
        let p = PreprocessPipeline::fit(&x, &PreprocessConfig::default()).unwrap();
        assert!(p.transform(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let x = random_matrix(4, 2, 7);
        let y = [true, false, true, false];
        let (xo, yo) =
            oversample_minority(&x, &y, OversampleMethod::Smote, 5, &mut seeded_rng(0)).unwrap();
        assert_eq!(xo, x);
        assert_eq!(yo, y);
    }

    #[test]
    fn random_oversampling_copies_minority_rows() {
        let x = random_matrix(15, 3, 8);
        let y: Vec<bool> = (0..15).map(|i| i >= 10).collect();
        let (xo, yo) =
            oversample_minority(&x, &y, OversampleMethod::Random, 5, &mut seeded_rng(1)).unwrap();
        assert_eq!(yo.iter().filter(|&&v| v).count(), 10);
        assert_eq!(yo.iter().filter(|&&v| !v).count(), 10);
        for r in 0..15 {
            assert_eq!(xo.row(r), x.row(r));
        }
        for r in 15..20 {
            assert!((10..15).any(|m| x.row(m) == xo.row(r)));
        }
    }

    #[test]
    fn smote_points_lie_on_minority_segments() {
        let x = random_matrix(40, 2, 9);
        let y: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let minority: Vec<usize> = (0..40).filter(|&i| y[i]).collect();
        let (xo, _) =
            oversample_minority(&x, &y, OversampleMethod::Smote, 5, &mut seeded_rng(2)).unwrap();
        for r in 40..xo.rows() {
            let p = xo.row(r);
            let on_segment = minority.iter().any(|&a| {
                minority.iter().any(|&b| {
                    if a == b {
                        return false;
                    }
                    let (xa, xb) = (x.row(a), x.row(b));
                    let d = [xb[0] - xa[0], xb[1] - xa[1]];
                    let w = [p[0] - xa[0], p[1] - xa[1]];
                    let len2 = d[0] * d[0] + d[1] * d[1];
                    let u = (w[0] * d[0] + w[1] * d[1]) / len2;
                    let cross = (w[0] * d[1] - w[1] * d[0]).abs();
                    (-1e-12..=1.0 + 1e-12).contains(&u) && cross < 1e-9
                })
            });
            assert!(on_segment, "row {r} not a convex combination");
        }
    }

    #[test]
    fn smote_falls_back_when_minority_is_small() {
        let x = random_matrix(12, 2, 10);
        let y: Vec<bool> = (0..12).map(|i| i < 3).collect();
        let (xo, yo) =
            oversample_minority(&x, &y, OversampleMethod::Smote, 5, &mut seeded_rng(3)).unwrap();
        assert_eq!(yo.iter().filter(|&&v| v).count(), 9);
        for r in 12..xo.rows() {
            assert!((0..3).any(|m| x.row(m) == xo.row(r)));
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let x = random_matrix(3, 2, 11);
        assert!(
            oversample_minority(&x, &[true; 3], OversampleMethod::Random, 5, &mut seeded_rng(0))
                .is_err()
        );
    }

    #[test]
    fn method_aliases_parse() {
        assert_eq!("ADASYN".parse::<OversampleMethod>().unwrap(), OversampleMethod::Smote);
        assert_eq!(
            "RandomOversampler".parse::<OversampleMethod>().unwrap(),
            OversampleMethod::Random
        );
        assert!("tomek".parse::<OversampleMethod>().is_err());
    }

    proptest! {
        #[test]
        fn filter_is_row_order_invariant(seed in 0u64..1000, t in 0.3f64..0.99) {
            let base = random_matrix(25, 4, seed);
            let mut x = Matrix::zeros(25, 5);
            for r in 0..25 {
                let z = base.row(r);
                x.row_mut(r).copy_from_slice(&[z[0], z[1], z[0] + 0.5 * z[2], z[3], z[1] - z[3]]);
            }
            let mut order: Vec<usize> = (0..25).collect();
            order.reverse();
            order.rotate_left((seed % 25) as usize);
            let shuffled = x.select_rows(&order);
            prop_assert_eq!(
                fit_correlation_filter(&x, t).unwrap(),
                fit_correlation_filter(&shuffled, t).unwrap()
            );
        }
    }
}
