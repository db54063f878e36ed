//! Classification metrics and aggregation across seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{brier, ece, AbstainDecision};

pub const ECE_BINS: usize = 10;
pub const SEED_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn tally(preds: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub counts: Confusion,
}

/// Confusion-matrix metrics; every 0/0 ratio is reported as 0.
pub fn binary_metrics(preds: &[bool], labels: &[bool]) -> Result<BinaryMetrics> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::input("metrics need equal-length, non-empty inputs"));
    }
    let c = Confusion::tally(preds, labels);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Ok(BinaryMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        balanced_accuracy: (sensitivity + specificity) / 2.0,
        f1,
        precision,
        sensitivity,
        specificity,
        counts: c,
    })
}

fn check_scored(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::input("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::input("ranking metrics need both classes present"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted 1/2.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scored(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: `Σ (R_k − R_{k−1})·P_k` over distinct score thresholds
/// taken from high to low.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_scored(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub withheld: usize,
    pub coverage: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Absent when the retained set holds a single class.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ece: f64,
    pub brier: f64,
    pub counts: Confusion,
}

/// Metrics on the samples that received a verdict; `scores` are the PD
/// probabilities and are used unmodified for ranking and calibration.
pub fn evaluate(scores: &[f64], labels: &[bool], decisions: &[AbstainDecision]) -> Result<EvalReport> {
    if scores.len() != labels.len() || scores.len() != decisions.len() || scores.is_empty() {
        return Err(Error::input("evaluation inputs differ in length or are empty"));
    }
    let kept: Vec<usize> = (0..scores.len()).filter(|&i| !decisions[i].is_withheld()).collect();
    if kept.is_empty() {
        return Err(Error::input("every sample was withheld"));
    }
    let s: Vec<f64> = kept.iter().map(|&i| scores[i]).collect();
    let y: Vec<bool> = kept.iter().map(|&i| labels[i]).collect();
    let preds: Vec<bool> = kept
        .iter()
        .map(|&i| decisions[i].label().map(|l| l.is_positive()).unwrap_or(false))
        .collect();
    let m = binary_metrics(&preds, &y)?;
    let both = y.iter().any(|&v| v) && y.iter().any(|&v| !v);
    Ok(EvalReport {
        n: scores.len(),
        withheld: scores.len() - kept.len(),
        coverage: kept.len() as f64 / scores.len() as f64,
        accuracy: m.accuracy,
        balanced_accuracy: m.balanced_accuracy,
        auroc: if both { Some(auroc(&s, &y)?) } else { None },
        auprc: if both { Some(auprc(&s, &y)?) } else { None },
        f1: m.f1,
        precision: m.precision,
        sensitivity: m.sensitivity,
        specificity: m.specificity,
        ece: ece(&s, &y, ECE_BINS)?,
        brier: brier(&s, &y)?,
        counts: m.counts,
    })
}

impl EvalReport {
    /// Named scalar metrics, in a stable order.
    pub fn metric_map(&self) -> BTreeMap<&'static str, f64> {
        let mut m = BTreeMap::new();
        m.insert("accuracy", self.accuracy);
        m.insert("balanced_accuracy", self.balanced_accuracy);
        if let Some(v) = self.auroc {
            m.insert("auroc", v);
        }
        if let Some(v) = self.auprc {
            m.insert("auprc", v);
        }
        m.insert("f1", self.f1);
        m.insert("precision", self.precision);
        m.insert("sensitivity", self.sensitivity);
        m.insert("specificity", self.specificity);
        m.insert("coverage", self.coverage);
        m.insert("ece", self.ece);
        m.insert("brier", self.brier);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub low: f64,
    pub high: f64,
    pub k: usize,
}

impl MeanCi {
    /// True when the two intervals share no point.
    pub fn disjoint_from(&self, other: &MeanCi) -> bool {
        self.low > other.high || other.low > self.high
    }
}

/// `mean ± 1.96·s/√k` with the sample standard deviation.
pub fn mean_ci(values: &[f64]) -> Result<MeanCi> {
    let k = values.len();
    if k < 2 {
        return Err(Error::input(format!("seed aggregation needs k >= 2, got {k}")));
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let sd = crate::uncertainty::sample_std(values, mean);
    let half = SEED_Z * sd / (k as f64).sqrt();
    Ok(MeanCi {
        mean,
        half_width: half,
        low: mean - half,
        high: mean + half,
        k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub k: usize,
    pub metrics: BTreeMap<String, MeanCi>,
}

/// Per-metric mean and interval. Metrics missing from some reports are
/// aggregated over the reports that have them, if at least two do.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedAggregate> {
    if reports.len() < 2 {
        return Err(Error::input(format!(
            "seed aggregation needs k >= 2, got {}",
            reports.len()
        )));
    }
    let mut values: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.metric_map() {
            values.entry(name).or_default().push(v);
        }
    }
    let mut metrics = BTreeMap::new();
    for (name, vs) in values {
        if vs.len() >= 2 {
            metrics.insert(name.to_string(), mean_ci(&vs)?);
        }
    }
    Ok(SeedAggregate {
        k: reports.len(),
        metrics,
    })
}
