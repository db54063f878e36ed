use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Cohort, Demographics, Session};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Rng};
use crate::types::{Label, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSignal {
    pub width: usize,
    /// Leading dimensions whose class means differ.
    pub informative: usize,
    /// Class mean separation on each informative dimension, in noise units.
    pub effect: f64,
    /// Per-session probability that the recording carries no signal and
    /// inflated noise.
    #[serde(default)]
    pub degraded_rate: f64,
    /// Per-session probability that the task is absent.
    #[serde(default)]
    pub missing_rate: f64,
}

fn default_degraded_noise() -> f64 {
    3.0
}

fn one() -> f64 {
    1.0
}

/// Class-conditional Gaussian cohort with independently tunable tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortSpec {
    pub subjects: usize,
    /// Sessions per subject are uniform on `1..=max_sessions`.
    pub max_sessions: usize,
    pub prevalence: f64,
    pub noise: f64,
    /// Correlation between informative dimension `j` of different tasks,
    /// induced by a per-subject latent shared across tasks.
    pub signal_correlation: f64,
    #[serde(default = "default_degraded_noise")]
    pub degraded_noise: f64,
    /// Multiplies every effect for female subjects.
    #[serde(default = "one")]
    pub female_effect_scale: f64,
    pub tasks: BTreeMap<TaskKind, TaskSignal>,
    pub seed: u64,
}

impl Default for SyntheticCohortSpec {
    /// Released feature widths with moderate per-task signal.
    fn default() -> Self {
        let task = |width, informative, effect| TaskSignal {
            width,
            informative,
            effect,
            degraded_rate: 0.0,
            missing_rate: 0.0,
        };
        SyntheticCohortSpec {
            subjects: 845,
            max_sessions: 2,
            prevalence: 272.0 / 845.0,
            noise: 1.0,
            signal_correlation: 0.1,
            degraded_noise: default_degraded_noise(),
            female_effect_scale: 1.0,
            tasks: [
                (TaskKind::Tapping, task(TaskKind::Tapping.default_width(), 10, 0.3)),
                (TaskKind::Smile, task(TaskKind::Smile.default_width(), 6, 0.4)),
                (TaskKind::Speech, task(TaskKind::Speech.default_width(), 16, 0.3)),
            ]
            .into_iter()
            .collect(),
            seed: 2024,
        }
    }
}

impl SyntheticCohortSpec {
    /// The desk-scale cohort used for the end-to-end checks: 1000 subjects
    /// with up to four sessions, three complementary tasks, a wide and
    /// mostly uninformative speech table, and a small share of degraded or
    /// missing recordings.
    pub fn desk() -> Self {
        let task = |width, informative, effect| TaskSignal {
            width,
            informative,
            effect,
            degraded_rate: 0.1,
            missing_rate: 0.05,
        };
        SyntheticCohortSpec {
            subjects: 1000,
            max_sessions: 4,
            prevalence: 272.0 / 845.0,
            noise: 1.0,
            signal_correlation: 0.1,
            degraded_noise: default_degraded_noise(),
            female_effect_scale: 1.0,
            tasks: [
                (TaskKind::Tapping, task(24, 6, 0.5)),
                (TaskKind::Smile, task(16, 4, 0.6)),
                (TaskKind::Speech, task(256, 8, 0.5)),
            ]
            .into_iter()
            .collect(),
            seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.subjects == 0 || self.max_sessions == 0 {
            return bad("subject and session counts must be positive".into());
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence {} not in (0, 1)", self.prevalence));
        }
        if !(self.noise > 0.0) || !(self.degraded_noise > 0.0) {
            return bad("noise scales must be positive".into());
        }
        if !(0.0..1.0).contains(&self.signal_correlation) {
            return bad("signal correlation must be in [0, 1)".into());
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        for (t, s) in &self.tasks {
            if s.width == 0 || s.informative > s.width {
                return bad(format!("{t}: need 0 <= informative <= width, width > 0"));
            }
            if !(0.0..1.0).contains(&s.degraded_rate) || !(0.0..1.0).contains(&s.missing_rate) {
                return bad(format!("{t}: rates must be in [0, 1)"));
            }
            if !s.effect.is_finite() {
                return bad(format!("{t}: effect must be finite"));
            }
        }
        Ok(())
    }

    pub fn widths(&self) -> BTreeMap<TaskKind, usize> {
        self.tasks.iter().map(|(t, s)| (*t, s.width)).collect()
    }

    /// AUROC of the Bayes-optimal classifier on one session's features of
    /// `tasks`, assuming no degraded recordings and unit female scale.
    ///
    /// Dimensions sharing an index across tasks are equicorrelated with
    /// correlation `ρ`; dimensions with different indices are independent,
    /// so the squared Mahalanobis separation is a sum over indices.
    pub fn bayes_auroc(&self, tasks: &[TaskKind]) -> f64 {
        let rho = self.signal_correlation;
        let max_k = tasks.iter().filter_map(|t| self.tasks.get(t)).map(|s| s.informative).max().unwrap_or(0);
        let mut d2 = 0.0;
        for j in 0..max_k {
            let deltas: Vec<f64> = tasks
                .iter()
                .filter_map(|t| self.tasks.get(t))
                .filter(|s| s.informative > j)
                .map(|s| s.effect)
                .collect();
            let k = deltas.len() as f64;
            let sum: f64 = deltas.iter().sum();
            let sq: f64 = deltas.iter().map(|d| d * d).sum();
            d2 += (sq - rho * sum * sum / (1.0 - rho + rho * k)) / (1.0 - rho);
        }
        let d = d2.sqrt() / self.noise;
        Normal::standard().cdf(d / std::f64::consts::SQRT_2)
    }
}

fn gauss(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Draws a cohort; identical specs give identical cohorts.
pub fn gen_synthetic_cohort(spec: &SyntheticCohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let rho = spec.signal_correlation;
    let max_k = spec.tasks.values().map(|s| s.informative).max().unwrap_or(0);
    let digits = spec.subjects.to_string().len();
    let mut sessions = Vec::new();
    for i in 0..spec.subjects {
        let label = Label::from_positive(rng.random_bool(spec.prevalence));
        let female = rng.random_bool(0.5);
        let age = round1((65.0 + 10.0 * gauss(&mut rng)).clamp(30.0, 95.0));
        let white = rng.random_bool(0.8);
        let duration = (label.is_positive() && rng.random_bool(0.5)).then(|| round1(rng.random_range(0.0..15.0)));
        let demographics = Demographics {
            sex: Some(if female { "female" } else { "male" }.to_string()),
            age: Some(age),
            ethnicity: Some(if white { "white" } else { "non-white" }.to_string()),
            cohort: Some("synthetic".to_string()),
            disease_duration: duration,
        };
        let latent: Vec<f64> = (0..max_k).map(|_| gauss(&mut rng)).collect();
        let sign = if label.is_positive() { 0.5 } else { -0.5 };
        let scale = if female { spec.female_effect_scale } else { 1.0 };
        let subject_id = format!("subj-{i:0digits$}");
        let n_sessions = rng.random_range(1..=spec.max_sessions);
        for k in 0..n_sessions {
            let mut features = BTreeMap::new();
            for (task, s) in &spec.tasks {
                let missing = rng.random_bool(s.missing_rate);
                let degraded = rng.random_bool(s.degraded_rate);
                let mut f = Vec::with_capacity(s.width);
                for j in 0..s.width {
                    let e = gauss(&mut rng);
                    let v = if degraded {
                        spec.noise * spec.degraded_noise * e
                    } else if j < s.informative {
                        sign * s.effect * scale + spec.noise * (rho.sqrt() * latent[j] + (1.0 - rho).sqrt() * e)
                    } else {
                        spec.noise * e
                    };
                    f.push(v);
                }
                if !missing {
                    features.insert(*task, f);
                }
            }
            if features.is_empty() {
                // keep the first task so that every session is usable
                let first = *spec.tasks.keys().next().expect("validated");
                let w = spec.tasks[&first].width;
                features.insert(first, (0..w).map(|_| spec.noise * gauss(&mut rng)).collect());
            }
            sessions.push(Session {
                subject_id: subject_id.clone(),
                session_id: format!("{subject_id}-{k}"),
                label,
                demographics: demographics.clone(),
                features,
            });
        }
    }
    let cohort = Cohort {
        widths: spec.widths(),
        sessions,
    };
    cohort.validate()?;
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticCohortSpec {
        let mut s = SyntheticCohortSpec::desk();
        s.subjects = 50;
        s
    }

    #[test]
    fn deterministic_under_seed() {
        let a = gen_synthetic_cohort(&small()).unwrap();
        let b = gen_synthetic_cohort(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed += 1;
        assert_ne!(a, gen_synthetic_cohort(&other).unwrap());
    }

    #[test]
    fn class_means_match_configured_effects() {
        let mut spec = SyntheticCohortSpec::desk();
        spec.subjects = 10_000;
        spec.max_sessions = 1;
        for s in spec.tasks.values_mut() {
            s.degraded_rate = 0.0;
            s.missing_rate = 0.0;
        }
        let cohort = gen_synthetic_cohort(&spec).unwrap();
        // family-wise bound over every column and class
        let checks = 2.0 * spec.tasks.values().map(|s| s.width).sum::<usize>() as f64;
        let z = Normal::standard().inverse_cdf(1.0 - 0.001 / (2.0 * checks));
        for (task, sig) in &spec.tasks {
            for (label, target) in [(Label::Pd, 0.5 * sig.effect), (Label::NonPd, -0.5 * sig.effect)] {
                let rows: Vec<&Vec<f64>> = cohort
                    .sessions
                    .iter()
                    .filter(|s| s.label == label)
                    .map(|s| &s.features[task])
                    .collect();
                let n = rows.len() as f64;
                let se = spec.noise / n.sqrt();
                for j in 0..sig.width {
                    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                    let want = if j < sig.informative { target } else { 0.0 };
                    assert!((mean - want).abs() < z * se, "{task} {j} {mean}");
                }
            }
        }
    }

    #[test]
    fn bayes_auroc_reduces_to_single_dimension() {
        let mut spec = small();
        spec.signal_correlation = 0.0;
        let t = spec.tasks.get_mut(&TaskKind::Smile).unwrap();
        t.informative = 1;
        t.effect = 1.0;
        let want = Normal::standard().cdf(1.0 / std::f64::consts::SQRT_2);
        assert!((spec.bayes_auroc(&[TaskKind::Smile]) - want).abs() < 1e-12);
        assert!(spec.bayes_auroc(&TaskKind::ALL) > spec.bayes_auroc(&[TaskKind::Smile]));
    }

    #[test]
    fn invalid_spec_is_config_error() {
        let mut s = small();
        s.prevalence = 1.0;
        assert!(matches!(gen_synthetic_cohort(&s), Err(Error::Config(_))));
    }
}
