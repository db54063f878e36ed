//! Withholding policies: which post-hoc calibration runs and how a verdict
//! is withheld.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::task_model::McPrediction;
use crate::types::Label;
use crate::uncertainty::{
    abstain_by_ci, fit_conformal, fit_platt, AbstainDecision, ConformalCalibrator, PlattScaler, WithholdReason,
    DEFAULT_ALPHA, DEFAULT_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Withhold {
    #[default]
    None,
    McCi,
    Conformal,
}

impl FromStr for Withhold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Withhold::None),
            "mc-ci" => Ok(Withhold::McCi),
            "conformal" => Ok(Withhold::Conformal),
            other => Err(Error::config(format!("unknown withholding method {other:?} (none, mc-ci, conformal)"))),
        }
    }
}

impl fmt::Display for Withhold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Withhold::None => "none",
            Withhold::McCi => "mc-ci",
            Withhold::Conformal => "conformal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub withhold: Withhold,
    pub platt: bool,
    pub alpha: f64,
    pub threshold: f64,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            withhold: Withhold::None,
            platt: false,
            alpha: DEFAULT_ALPHA,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl Policy {
    pub fn new(withhold: Withhold, platt: bool) -> Self {
        Policy {
            withhold,
            platt,
            ..Policy::default()
        }
    }

    /// Whether this policy needs held-out predictions to fit on.
    pub fn needs_calibration(&self) -> bool {
        self.platt || self.withhold == Withhold::Conformal
    }

    /// Platt scaling on the calibration logits first, then conformal scores
    /// on the Platt-mapped probabilities.
    pub fn fit(&self, preds: &[McPrediction], labels: &[bool]) -> Result<Calibration> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        let platt = if self.platt {
            let z: Vec<f64> = preds.iter().map(McPrediction::logit).collect();
            Some(fit_platt(&z, labels)?)
        } else {
            None
        };
        let conformal = if self.withhold == Withhold::Conformal {
            let p: Vec<f64> = preds.iter().map(|q| map_prob(platt.as_ref(), q.mean)).collect();
            Some(fit_conformal(&p, labels, self.alpha)?.with_platt(platt))
        } else {
            None
        };
        Ok(Calibration {
            policy: *self,
            platt,
            conformal,
        })
    }
}

fn map_prob(platt: Option<&PlattScaler>, p: f64) -> f64 {
    platt.map_or(p, |s| s.apply(p))
}

/// Fitted calibration state for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub policy: Policy,
    pub platt: Option<PlattScaler>,
    pub conformal: Option<ConformalCalibrator>,
}

/// One test sample's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub session_id: String,
    pub label: Label,
    /// PD probability after any Platt mapping.
    pub prob: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub verdict: Option<Label>,
    pub reason: Option<WithholdReason>,
}

impl Calibration {
    /// Scores and verdicts for each prediction.
    pub fn decide(&self, preds: &[McPrediction]) -> Vec<(McPrediction, AbstainDecision)> {
        let t = self.policy.threshold;
        preds
            .iter()
            .map(|q| {
                let mut m = *q;
                if let Some(s) = &self.platt {
                    let (a, b) = (s.apply(q.ci_low), s.apply(q.ci_high));
                    m.mean = s.apply(q.mean);
                    (m.ci_low, m.ci_high) = (a.min(b), a.max(b));
                }
                let decision = match (&self.conformal, self.policy.withhold) {
                    (Some(c), _) => c.predict_set(m.mean).1,
                    (None, Withhold::McCi) => abstain_by_ci(&m, t),
                    _ => AbstainDecision::Predict(m.label(t)),
                };
                (m, decision)
            })
            .collect()
    }

    pub fn evaluate(
        &self,
        preds: &[McPrediction],
        labels: &[bool],
        session_ids: &[String],
    ) -> Result<(EvalReport, Vec<PredictionRecord>)> {
        if session_ids.len() != preds.len() {
            return Err(Error::input("one session id per prediction is required"));
        }
        let decided = self.decide(preds);
        let scores: Vec<f64> = decided.iter().map(|(m, _)| m.mean).collect();
        let decisions: Vec<AbstainDecision> = decided.iter().map(|(_, d)| *d).collect();
        let report = evaluate(&scores, labels, &decisions)?;
        let records = decided
            .iter()
            .zip(labels)
            .zip(session_ids)
            .map(|(((m, d), &y), id)| PredictionRecord {
                session_id: id.clone(),
                label: Label::from_positive(y),
                prob: m.mean,
                std: m.std,
                ci_low: m.ci_low,
                ci_high: m.ci_high,
                verdict: d.label(),
                reason: match d {
                    AbstainDecision::Withhold(r) => Some(*r),
                    AbstainDecision::Predict(_) => None,
                },
            })
            .collect();
        Ok((report, records))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_keeps_everything() {
        let preds: Vec<McPrediction> = [0.2, 0.7, 0.5].iter().map(|&p| McPrediction::point(p, 1)).collect();
        let cal = Policy::default().fit(&[], &[]).unwrap();
        let ids: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let (r, recs) = cal.evaluate(&preds, &[false, true, true], &ids).unwrap();
        assert_eq!(r.coverage, 1.0);
        assert_eq!(recs[2].verdict, Some(Label::NonPd));
    }

    #[test]
    fn mc_ci_on_point_predictions_never_withholds() {
        let preds: Vec<McPrediction> = [0.45, 0.55].iter().map(|&p| McPrediction::point(p, 30)).collect();
        let cal = Policy::new(Withhold::McCi, false).fit(&[], &[]).unwrap();
        assert!(cal.decide(&preds).iter().all(|(_, d)| !d.is_withheld()));
    }

    #[test]
    fn conformal_uses_platt_mapped_scores() {
        let preds: Vec<McPrediction> = (0..40).map(|i| McPrediction::point(0.3 + 0.01 * i as f64, 1)).collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 3 != 0).collect();
        let cal = Policy::new(Withhold::Conformal, true).fit(&preds, &labels).unwrap();
        let c = cal.conformal.as_ref().unwrap();
        assert_eq!(c.platt, cal.platt);
        let mapped = cal.platt.unwrap().apply(preds[5].mean);
        assert_eq!(cal.decide(&preds[5..6])[0].0.mean, mapped);
    }

    #[test]
    fn parse_round_trip() {
        for w in [Withhold::None, Withhold::McCi, Withhold::Conformal] {
            assert_eq!(w.to_string().parse::<Withhold>().unwrap(), w);
        }
        assert!("maybe".parse::<Withhold>().is_err());
    }
}
