//! Generates a synthetic cohort, writes it as task tables, reads it back and
//! splits it by subject.

use ufnet::data::{
    gen_synthetic_cohort, load_cohort_dir, make_split, subject_labels, write_task_csv, Fold, SyntheticCohortSpec,
    DEFAULT_RATIOS,
};
use ufnet::types::TaskKind;

fn main() -> ufnet::Result<()> {
    let mut spec = SyntheticCohortSpec::desk();
    spec.subjects = 200;
    let cohort = gen_synthetic_cohort(&spec)?;

    let dir = std::env::temp_dir().join(format!("ufnet-synthetic-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| ufnet::Error::Io { path: dir.clone(), source: e })?;
    for t in TaskKind::ALL {
        write_task_csv(&dir.join(format!("{t}.csv")), &cohort, t)?;
    }
    let loaded = load_cohort_dir(&dir, &spec.widths(), None)?;
    println!("{} sessions written to {}, {} read back", cohort.sessions.len(), dir.display(), loaded.sessions.len());
    for t in TaskKind::ALL {
        let n = loaded.sessions.iter().filter(|s| s.features.contains_key(&t)).count();
        println!("  {:<8} width {:>4}  sessions {n}", t.name(), loaded.widths[&t]);
    }

    let plan = make_split(&subject_labels(&loaded.sessions)?, DEFAULT_RATIOS, 0)?;
    for fold in [Fold::Train, Fold::Val, Fold::Test] {
        println!("{fold:?}: {} subjects", plan.subjects_in(fold).len());
    }
    println!("split digest {}", plan.digest()?);
    println!("bayes AUROC of all tasks {:.3}", spec.bayes_auroc(&TaskKind::ALL));
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
