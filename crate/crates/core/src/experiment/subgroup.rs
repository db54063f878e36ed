//! Misclassification rates across demographic groups with significance
//! tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::policy::PredictionRecord;
use crate::data::{Demographics, Session};
use crate::error::{Error, Result};
use crate::stats::{fisher_exact_2x2, kendall_tau, proportion_ci, two_proportion_ztest, FisherResult, KendallResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: String,
    pub n: u64,
    pub errors: u64,
    pub rate: f64,
    /// Half-width of the normal 95% interval.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTest {
    /// `"a vs b"` for two groups, `"a vs rest"` otherwise.
    pub comparison: String,
    pub z: f64,
    pub z_p_value: f64,
    /// Absent when a margin of the 2×2 table is zero.
    pub fisher: Option<FisherResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attribute: String,
    pub groups: Vec<GroupRate>,
    pub tests: Vec<GroupTest>,
    /// Retained predictions whose attribute was unknown.
    pub unknown: u64,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationTrend {
    /// Distinct durations among PD sessions with a verdict.
    pub durations: Vec<f64>,
    pub error_rates: Vec<f64>,
    pub kendall: Option<KendallResult>,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub n: u64,
    pub withheld: u64,
    pub attributes: Vec<AttributeReport>,
    pub duration: Option<DurationTrend>,
}

pub const AGE_BUCKETS: [(f64, f64, &str); 5] = [
    (f64::NEG_INFINITY, 50.0, "<50"),
    (50.0, 60.0, "50-59"),
    (60.0, 70.0, "60-69"),
    (70.0, 80.0, "70-79"),
    (80.0, f64::INFINITY, "80+"),
];

fn age_bucket(age: f64) -> &'static str {
    AGE_BUCKETS
        .iter()
        .find(|(lo, hi, _)| age >= *lo && age < *hi)
        .map(|b| b.2)
        .expect("buckets cover the real line")
}

type Attribute = (&'static str, fn(&Demographics) -> Option<String>);

const ATTRIBUTES: [Attribute; 4] = [
    ("sex", |d| d.sex.clone()),
    ("ethnicity", |d| d.ethnicity.clone()),
    ("age", |d| d.age.map(|a| age_bucket(a).to_string())),
    ("cohort", |d| d.cohort.clone()),
];

/// Session-level error rates of the retained predictions, grouped by every
/// demographic attribute, plus the disease-duration trend among PD sessions.
pub fn subgroup_analysis(records: &[PredictionRecord], sessions: &[Session]) -> Result<SubgroupReport> {
    let by_id: BTreeMap<&str, &Session> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut kept = Vec::new();
    for r in records {
        let s = by_id
            .get(r.session_id.as_str())
            .ok_or_else(|| Error::data(format!("session {} has no demographic record", r.session_id)))?;
        if let Some(v) = r.verdict {
            kept.push((&s.demographics, v != r.label, r.label.is_positive()));
        }
    }
    if kept.is_empty() {
        return Err(Error::input("no retained predictions to analyse"));
    }

    let mut attributes = Vec::new();
    for (name, get) in ATTRIBUTES {
        let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        let mut unknown = 0;
        for (d, wrong, _) in &kept {
            match get(d) {
                Some(g) => {
                    let c = counts.entry(g).or_default();
                    c.0 += 1;
                    c.1 += *wrong as u64;
                }
                None => unknown += 1,
            }
        }
        let mut notices = Vec::new();
        if name == "age" {
            for (_, _, label) in AGE_BUCKETS {
                if !counts.contains_key(label) {
                    notices.push(format!("age group {label} has no members and is omitted"));
                }
            }
        }
        if unknown > 0 {
            notices.push(format!("{unknown} predictions with unknown {name} excluded"));
        }
        let mut ordered: Vec<(&String, &(u64, u64))> = counts.iter().collect();
        if name == "age" {
            ordered.sort_by_key(|(g, _)| AGE_BUCKETS.iter().position(|b| b.2 == g.as_str()));
        }
        let groups = ordered
            .into_iter()
            .map(|(g, &(n, e))| {
                let (rate, half) = proportion_ci(e, n)?;
                Ok(GroupRate {
                    group: g.clone(),
                    n,
                    errors: e,
                    rate,
                    half_width: half,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tests = group_tests(&groups)?;
        attributes.push(AttributeReport {
            attribute: name.to_string(),
            groups,
            tests,
            unknown,
            notices,
        });
    }

    Ok(SubgroupReport {
        n: records.len() as u64,
        withheld: (records.len() - kept.len()) as u64,
        attributes,
        duration: duration_trend(&kept)?,
    })
}

fn group_tests(groups: &[GroupRate]) -> Result<Vec<GroupTest>> {
    let test = |label: String, a: (u64, u64), b: (u64, u64)| -> Result<GroupTest> {
        let (z, p) = two_proportion_ztest(a.1, a.0, b.1, b.0)?;
        let table = [[a.1, a.0 - a.1], [b.1, b.0 - b.1]];
        Ok(GroupTest {
            comparison: label,
            z,
            z_p_value: p,
            fisher: fisher_exact_2x2(table).ok(),
        })
    };
    match groups.len() {
        0 | 1 => Ok(Vec::new()),
        2 => {
            let (a, b) = (&groups[0], &groups[1]);
            Ok(vec![test(format!("{} vs {}", a.group, b.group), (a.n, a.errors), (b.n, b.errors))?])
        }
        _ => {
            let total: (u64, u64) = groups.iter().fold((0, 0), |t, g| (t.0 + g.n, t.1 + g.errors));
            groups
                .iter()
                .map(|g| {
                    let rest = (total.0 - g.n, total.1 - g.errors);
                    test(format!("{} vs rest", g.group), (g.n, g.errors), rest)
                })
                .collect()
        }
    }
}

fn duration_trend(kept: &[(&Demographics, bool, bool)]) -> Result<Option<DurationTrend>> {
    let mut by_duration: BTreeMap<u64, (f64, u64, u64)> = BTreeMap::new();
    for (d, wrong, positive) in kept {
        if let (Some(dur), true) = (d.disease_duration, *positive) {
            let e = by_duration.entry(dur.to_bits()).or_insert((dur, 0, 0));
            e.1 += 1;
            e.2 += *wrong as u64;
        }
    }
    if by_duration.is_empty() {
        return Ok(None);
    }
    let mut rows: Vec<(f64, f64)> = by_duration.values().map(|&(d, n, e)| (d, e as f64 / n as f64)).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let durations: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let error_rates: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (kendall, notice) = match kendall_tau(&durations, &error_rates) {
        Ok(k) => (Some(k), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Some(DurationTrend {
        durations,
        error_rates,
        kendall,
        notice,
    }))
}
