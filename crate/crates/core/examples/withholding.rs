//! Selective prediction on simulated scores: split conformal sets with and
//! without Platt scaling, against the accept-everything policy.

use rand::Rng;
use rand_distr::StandardNormal;
use ufnet::experiment::{Policy, Withhold};
use ufnet::numerics::seeded_rng;
use ufnet::task_model::McPrediction;

/// Overconfident scores: the logit is stretched, so Platt has work to do.
fn simulate(n: usize, seed: u64) -> (Vec<McPrediction>, Vec<bool>) {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let y = rng.random_bool(0.32);
            let noise: f64 = rng.sample(StandardNormal);
            let z = 2.5 * (if y { 0.8 } else { -0.8 } + noise);
            let p = 1.0 / (1.0 + (-z).exp());
            (McPrediction::point(p, 1), y)
        })
        .unzip()
}

fn main() -> ufnet::Result<()> {
    let (cal, cal_y) = simulate(400, 1);
    let (test, test_y) = simulate(2000, 2);
    let ids: Vec<String> = (0..test.len()).map(|i| format!("t{i}")).collect();

    println!("{:<18} {:>9} {:>9} {:>7}", "policy", "coverage", "accuracy", "ece");
    for (name, policy) in [
        ("none", Policy::new(Withhold::None, false)),
        ("conformal", Policy::new(Withhold::Conformal, false)),
        ("conformal + platt", Policy::new(Withhold::Conformal, true)),
    ] {
        let fitted = policy.fit(&cal, &cal_y)?;
        let (r, _) = fitted.evaluate(&test, &test_y, &ids)?;
        println!("{name:<18} {:>9.4} {:>9.4} {:>7.4}", r.coverage, r.accuracy, r.ece);
    }
    Ok(())
}
