//! Multi-seed fusion experiment on the desk cohort: task models, the fusion
//! network, its early variant, the baselines and the withholding policies.
//!
//! `cargo run --release --example fusion_sweep -- 5` runs five seeds.

use ufnet::data::{gen_synthetic_cohort, make_split, subject_labels, SyntheticCohortSpec, DEFAULT_RATIOS};
use ufnet::experiment::{desk_experiment, run_fusion_sweep};
use ufnet::metrics::SeedAggregate;

fn row(name: &str, a: &SeedAggregate) {
    let cell = |k: &str| {
        a.metrics
            .get(k)
            .map_or_else(|| "-".to_string(), |m| format!("{:.4}±{:.4}", m.mean, m.half_width))
    };
    println!("{name:<14} {:>16} {:>16} {:>16}", cell("coverage"), cell("accuracy"), cell("auroc"));
}

fn main() -> ufnet::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3).max(2);
    let spec = SyntheticCohortSpec::desk();
    let cohort = gen_synthetic_cohort(&spec)?;
    let plan = make_split(&subject_labels(&cohort.sessions)?, DEFAULT_RATIOS, spec.seed)?;
    let exp = desk_experiment()?;
    let runs: Vec<u64> = (0..seeds).collect();
    let (outcomes, s) = run_fusion_sweep(&cohort, &plan, &exp, &runs)?;

    println!("{:<14} {:>16} {:>16} {:>16}", "model", "coverage", "accuracy", "auroc");
    for (t, a) in &s.single {
        row(t.name(), a);
    }
    row("ufnet", &s.ufnet);
    if let Some(e) = &s.ufnet_early {
        row("ufnet early", e);
    }
    for (b, a) in &s.baselines {
        row(b, a);
    }
    for (p, a) in &s.policies {
        row(&format!("withhold {}", p.withhold), a);
    }
    println!("attention profile of run 0: {:?}", outcomes[0].attention);
    Ok(())
}
