//! Error rates by demographic group for one fusion run, on a cohort where
//! the disease signal is weaker for female subjects.

use ufnet::data::{gen_synthetic_cohort, make_split, subject_labels, Fold, SyntheticCohortSpec, DEFAULT_RATIOS};
use ufnet::experiment::pipeline::{fusion_fold, session_ids};
use ufnet::experiment::{desk_experiment, run_fusion_seed, subgroup_analysis, test_seed, Policy, Withhold};

fn main() -> ufnet::Result<()> {
    let mut spec = SyntheticCohortSpec::desk();
    spec.female_effect_scale = 0.4;
    let cohort = gen_synthetic_cohort(&spec)?;
    let plan = make_split(&subject_labels(&cohort.sessions)?, DEFAULT_RATIOS, spec.seed)?;
    let mut exp = desk_experiment()?;
    exp.baselines.clear();
    exp.policies.clear();
    exp.compare_early = false;
    let (_, models) = run_fusion_seed(&cohort, &plan, &exp, 0)?;

    let refs: Vec<_> = models.tasks.iter().collect();
    let test = fusion_fold(&cohort, &plan, Fold::Test, &refs, 0)?;
    let ids = session_ids(&cohort, &plan, Fold::Test, exp.tasks())?;
    let preds = models.ufnet.predict(&test, test_seed(0))?;
    let cal = Policy::new(Withhold::None, false).fit(&preds, &test.labels)?;
    let (_, records) = cal.evaluate(&preds, &test.labels, &ids)?;

    let report = subgroup_analysis(&records, &cohort.sessions)?;
    for a in &report.attributes {
        println!("{}", a.attribute);
        for g in &a.groups {
            println!("  {:<10} n {:>4}  error {:.3} ± {:.3}", g.group, g.n, g.rate, g.half_width);
        }
        for t in &a.tests {
            let fisher = t.fisher.map_or_else(|| "-".into(), |f| format!("{:.4}", f.p_value));
            println!("  {:<22} z {:>6.2}  p {:.4}  fisher p {fisher}", t.comparison, t.z, t.z_p_value);
        }
    }
    if let Some(k) = report.duration.and_then(|d| d.kendall) {
        println!("duration trend: tau {:.3}, p {:.4}", k.tau, k.p_value);
    }
    Ok(())
}
