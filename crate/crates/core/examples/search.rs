//! Seeded random search over the task-model space, compared with the
//! shipped desk preset on validation AUROC.

use ufnet::data::{gen_synthetic_cohort, make_split, subject_labels, Fold, SyntheticCohortSpec, DEFAULT_RATIOS};
use ufnet::experiment::search::task_val_auroc;
use ufnet::experiment::{search_task, task_preset, train_task_on_cohort, SearchOptions};
use ufnet::types::TaskKind;

fn main() -> ufnet::Result<()> {
    let trials: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let cohort = gen_synthetic_cohort(&SyntheticCohortSpec::desk())?;
    let plan = make_split(&subject_labels(&cohort.sessions)?, DEFAULT_RATIOS, 1)?;
    let task = TaskKind::Tapping;
    let fold = |f| -> ufnet::Result<_> { cohort.task_data(&cohort.select(&plan, f, &[task])?, task) };
    let (train, val) = (fold(Fold::Train)?, fold(Fold::Val)?);

    let preset = train_task_on_cohort(&cohort, &plan, task, &task_preset("desk-tapping")?.config, None)?;
    let opts = SearchOptions {
        trials,
        seed: 0,
        max_epochs: Some(40),
    };
    let result = search_task(task, &train, &val, false, opts)?;
    for t in &result.trials {
        let auc = t.val_auroc.map_or_else(|| "failed".into(), |a| format!("{a:.4}"));
        println!("trial {:>3}: hidden {} epochs {:>3} val auroc {auc}", t.index, t.config.hidden_layers, t.config.train.epochs);
    }
    let best = result.best_trial();
    println!("best trial {} at {:.4}", best.index, best.val_auroc.unwrap_or(f64::NAN));
    println!("desk preset at {:.4}", task_val_auroc(&preset, &val)?);
    Ok(())
}
