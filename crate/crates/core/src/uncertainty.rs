//! Confidence intervals, abstention policies, Platt scaling and calibration
//! metrics.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use crate::task_model::McPrediction;
use crate::types::Label;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const MIN_CALIBRATION_SIZE: usize = 10;
pub const PLATT_SLOPE_CAP: f64 = 50.0;

/// Two-sided standard-normal quantile for a confidence `level`.
pub fn z_quantile(level: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(0.5 + level / 2.0)
}

/// Normal-theory interval `μ ± z·s/√n` for the mean of MC round outputs,
/// clipped to `[0, 1]`. Degenerate at `μ` for a single round.
pub fn ci_of_mean(rounds: &[f64], level: f64) -> (f64, f64) {
    let n = rounds.len();
    assert!(n >= 1, "ci_of_mean needs at least one value");
    if rounds.iter().all(|&v| v == rounds[0]) {
        return (rounds[0], rounds[0]);
    }
    let mean = rounds.iter().sum::<f64>() / n as f64;
    let sd = sample_std(rounds, mean);
    ci_from_moments(mean, sd, n, level)
}

pub(crate) fn ci_from_moments(mean: f64, sd: f64, n: usize, level: f64) -> (f64, f64) {
    if n <= 1 || sd == 0.0 {
        return (mean, mean);
    }
    let half = z_quantile(level) * sd / (n as f64).sqrt();
    ((mean - half).max(0.0), (mean + half).min(1.0))
}

pub(crate) fn sample_std(values: &[f64], mean: f64) -> f64 {
    let n = values.len();
    if n < 2 || values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WithholdReason {
    CiStraddlesThreshold,
    ConformalAmbiguous,
    ConformalEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainDecision {
    Predict(Label),
    Withhold(WithholdReason),
}

impl AbstainDecision {
    pub fn label(self) -> Option<Label> {
        match self {
            AbstainDecision::Predict(l) => Some(l),
            AbstainDecision::Withhold(_) => None,
        }
    }

    pub fn is_withheld(self) -> bool {
        matches!(self, AbstainDecision::Withhold(_))
    }
}

/// Withholds when the interval contains the threshold (inclusive on both ends).
pub fn abstain_by_ci(pred: &McPrediction, threshold: f64) -> AbstainDecision {
    if pred.ci_low <= threshold && threshold <= pred.ci_high {
        AbstainDecision::Withhold(WithholdReason::CiStraddlesThreshold)
    } else {
        AbstainDecision::Predict(pred.label(threshold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub pd: bool,
    pub non_pd: bool,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.pd as usize + self.non_pd as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibrator {
    pub alpha: f64,
    /// Conformity threshold; 1.0 when the quantile rank exceeds the
    /// calibration size (every class is then admitted).
    pub qhat: f64,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub platt: Option<PlattScaler>,
    #[serde(default)]
    pub label_smoothing: f64,
}

/// Split-conformal calibration on `(p(PD), label)` pairs with nonconformity
/// `1 − p(true class)`.
pub fn fit_conformal(probs: &[f64], labels: &[bool], alpha: f64) -> Result<ConformalCalibrator> {
    if probs.len() != labels.len() {
        return Err(Error::input("calibration scores and labels differ in length"));
    }
    let m = probs.len();
    if m < MIN_CALIBRATION_SIZE {
        return Err(Error::input(format!(
            "calibration set has {m} samples, need at least {MIN_CALIBRATION_SIZE}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha {alpha} not in (0, 1)")));
    }
    let mut scores: Vec<f64> = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y { 1.0 - p } else { p })
        .collect();
    scores.sort_by(f64::total_cmp);
    let rank = conformal_rank(m, alpha);
    let qhat = if rank > m { 1.0 } else { scores[rank - 1] };
    Ok(ConformalCalibrator {
        alpha,
        qhat,
        scores,
        platt: None,
        label_smoothing: 0.0,
    })
}

/// `⌈(m+1)(1−α)⌉`, guarded against representation error in `1−α`.
pub fn conformal_rank(m: usize, alpha: f64) -> usize {
    let x = (m as f64 + 1.0) * (1.0 - alpha);
    (x - 1e-9).ceil().max(1.0) as usize
}

impl ConformalCalibrator {
    pub fn with_platt(mut self, platt: Option<PlattScaler>) -> Self {
        self.platt = platt;
        self
    }

    pub fn predict_set(&self, p_pd: f64) -> (PredictionSet, AbstainDecision) {
        let set = PredictionSet {
            pd: 1.0 - p_pd <= self.qhat,
            non_pd: p_pd <= self.qhat,
        };
        let decision = match (set.pd, set.non_pd) {
            (true, false) => AbstainDecision::Predict(Label::Pd),
            (false, true) => AbstainDecision::Predict(Label::NonPd),
            (true, true) => AbstainDecision::Withhold(WithholdReason::ConformalAmbiguous),
            (false, false) => AbstainDecision::Withhold(WithholdReason::ConformalEmpty),
        };
        (set, decision)
    }
}

/// `σ(a·z + b)` on a logit `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler {
    pub a: f64,
    pub b: f64,
    /// True when the slope hit the cap or came out non-positive.
    #[serde(default)]
    pub degenerate: bool,
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

impl PlattScaler {
    pub fn apply_logit(&self, z: f64) -> f64 {
        sigmoid(self.a * z + self.b)
    }

    pub fn apply(&self, p: f64) -> f64 {
        self.apply_logit(logit(p))
    }
}

fn platt_nll(z: &[f64], y: &[bool], a: f64, b: f64) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&zi, &yi)| {
            let t = a * zi + b;
            // -log σ(t) = softplus(-t), -log(1-σ(t)) = softplus(t)
            let s = if yi { -t } else { t };
            if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            }
        })
        .sum()
}

/// True when one class lies entirely above the other along the logit axis,
/// in which case the likelihood has no finite maximiser.
fn separable(logits: &[f64], labels: &[bool]) -> bool {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (&z, &y) in logits.iter().zip(labels) {
        let c = y as usize;
        lo[c] = lo[c].min(z);
        hi[c] = hi[c].max(z);
    }
    hi[0] < lo[1] || hi[1] < lo[0]
}

/// Maximum-likelihood logistic fit of labels on logits via damped Newton.
pub fn fit_platt(logits: &[f64], labels: &[bool]) -> Result<PlattScaler> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::input("platt scaling needs equal-length, non-empty inputs"));
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::input("platt scaling needs both classes present"));
    }
    let (mut a, mut b) = (1.0, 0.0);
    let mut capped = false;
    let mut loss = platt_nll(logits, labels, a, b);
    for _ in 0..500 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&z, &y) in logits.iter().zip(labels) {
            let p = sigmoid(a * z + b);
            let r = p - if y { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            ga += r * z;
            gb += r;
            haa += w * z * z;
            hab += w * z;
            hbb += w;
        }
        if (ga * ga + gb * gb).sqrt() < 1e-8 {
            break;
        }
        haa += 1e-12;
        hbb += 1e-12;
        let det = haa * hbb - hab * hab;
        let (da, db) = if det.abs() > 1e-300 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let (na, nb) = (a - step * da, b - step * db);
            let nl = platt_nll(logits, labels, na, nb);
            if nl <= loss {
                a = na;
                b = nb;
                loss = nl;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if a.abs() > PLATT_SLOPE_CAP {
            a = PLATT_SLOPE_CAP.copysign(a);
            capped = true;
            break;
        }
        if !improved {
            break;
        }
    }
    if !capped && separable(logits, labels) {
        a = PLATT_SLOPE_CAP.copysign(a);
        capped = true;
    }
    if capped {
        // refit intercept with slope fixed at the cap
        for _ in 0..200 {
            let (mut g, mut h) = (0.0, 1e-12);
            for (&z, &y) in logits.iter().zip(labels) {
                let p = sigmoid(a * z + b);
                g += p - if y { 1.0 } else { 0.0 };
                h += p * (1.0 - p);
            }
            if g.abs() < 1e-8 {
                break;
            }
            b -= (g / h).clamp(-10.0, 10.0);
        }
    }
    let degenerate = capped || a <= 0.0;
    if degenerate {
        warn!("platt scaling fit is degenerate (a = {a:.4}, b = {b:.4})");
    }
    Ok(PlattScaler { a, b, degenerate })
}

/// Expected calibration error over equal-width bins of max-class confidence.
pub fn ece(probs: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::input("ece needs equal-length, non-empty inputs"));
    }
    if bins == 0 {
        return Err(Error::config("ece needs at least one bin"));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let conf = p.max(1.0 - p);
        let pred = p > DEFAULT_THRESHOLD;
        let b = ((conf * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        correct[b] += (pred == y) as usize;
    }
    let n = probs.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (correct[b] as f64 / c - conf_sum[b] / c).abs()
        })
        .sum())
}

pub fn brier(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::input("brier score needs equal-length, non-empty inputs"));
    }
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - if y { 1.0 } else { 0.0 }).powi(2))
        .sum::<f64>()
        / probs.len() as f64)
}
