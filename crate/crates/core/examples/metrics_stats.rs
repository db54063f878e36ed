//! Ranking and calibration metrics, then the significance tests used for
//! subgroup comparisons.

use ufnet::metrics::{auprc, auroc, binary_metrics};
use ufnet::stats::{fisher_exact_2x2, kendall_tau, proportion_ci, two_proportion_ztest};
use ufnet::uncertainty::{brier, ece};

fn main() -> ufnet::Result<()> {
    let scores = [0.91, 0.84, 0.77, 0.62, 0.58, 0.41, 0.33, 0.27, 0.12, 0.05];
    let labels = [true, true, false, true, false, true, false, false, false, false];
    let preds: Vec<bool> = scores.iter().map(|&s| s > 0.5).collect();
    let m = binary_metrics(&preds, &labels)?;
    println!("accuracy {:.3}  f1 {:.3}  sensitivity {:.3}", m.accuracy, m.f1, m.sensitivity);
    println!("auroc {:.4}  auprc {:.4}", auroc(&scores, &labels)?, auprc(&scores, &labels)?);
    println!("ece {:.4}  brier {:.4}", ece(&scores, &labels, 10)?, brier(&scores, &labels)?);

    // error counts of two demographic groups
    let (rate, half) = proportion_ci(18, 60)?;
    println!("group A error {rate:.3} ± {half:.3}");
    let (z, p) = two_proportion_ztest(18, 60, 9, 70)?;
    println!("z-test z = {z:.3}, p = {p:.4}");
    let f = fisher_exact_2x2([[18, 42], [9, 61]])?;
    println!(
        "fisher p = {:.4}, odds ratio {:.3} (conditional MLE {:.3})",
        f.p_value, f.odds_ratio, f.conditional_odds_ratio
    );

    let duration = [1.0, 2.0, 3.0, 5.0, 8.0, 12.0];
    let error = [0.31, 0.28, 0.22, 0.25, 0.17, 0.12];
    let k = kendall_tau(&duration, &error)?;
    println!("kendall tau {:.3}, p = {:.4} (exact: {})", k.tau, k.p_value, k.exact);
    Ok(())
}
