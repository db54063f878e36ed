//! Monte Carlo dropout on one task model: the spread of the stochastic
//! passes gives a per-session standard deviation and interval.

use ufnet::data::{gen_synthetic_cohort, make_split, subject_labels, Fold, SyntheticCohortSpec, DEFAULT_RATIOS};
use ufnet::experiment::{task_preset, train_task_on_cohort};
use ufnet::types::TaskKind;

fn main() -> ufnet::Result<()> {
    let mut spec = SyntheticCohortSpec::desk();
    spec.subjects = 400;
    let cohort = gen_synthetic_cohort(&spec)?;
    let plan = make_split(&subject_labels(&cohort.sessions)?, DEFAULT_RATIOS, 0)?;
    let task = TaskKind::Smile;

    let mut config = task_preset("desk-smile")?.config.clone();
    config.dropout = 0.25;
    config.mc_rounds = 500;
    let model = train_task_on_cohort(&cohort, &plan, task, &config, None)?;

    let idx = cohort.select(&plan, Fold::Test, &[task])?;
    let x = cohort.task_matrix(&idx[..8], task)?;
    let labels = cohort.labels(&idx[..8]);
    let point = model.predict_point(&x)?;
    let mc = model.predict(&x, 7)?;

    println!("{:>5} {:>8} {:>8} {:>8} {:>17}", "label", "point", "mc mean", "mc std", "95% interval");
    for ((p, m), y) in point.iter().zip(&mc).zip(labels) {
        println!(
            "{:>5} {p:>8.4} {:>8.4} {:>8.4}   [{:.4}, {:.4}]",
            u8::from(y),
            m.mean,
            m.std,
            m.ci_low,
            m.ci_high
        );
    }
    Ok(())
}
