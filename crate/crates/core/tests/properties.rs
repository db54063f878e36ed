//! Invariants over random inputs.

use std::collections::BTreeMap;

use proptest::prelude::*;
use ufnet::data::{
    gen_synthetic_cohort, load_cohort_dir, make_split, write_task_csv, Fold, SyntheticCohortSpec, DEFAULT_RATIOS,
};
use ufnet::fusion::attend;
use ufnet::metrics::auroc;
use ufnet::numerics::{seeded_rng, softmax_rows, Matrix};
use ufnet::preprocessing::{fit_correlation_filter, oversample_minority, FittedScaler, OversampleMethod, ScalerKind};
use ufnet::types::{Label, TaskKind};
use ufnet::uncertainty::{ci_of_mean, fit_conformal, fit_platt, logit, z_quantile};

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

/// Scores with both classes present.
fn scored(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    n.prop_flat_map(|n| (prop::collection::vec(-4.0..4.0f64, n), prop::collection::vec(any::<bool>(), n)))
        .prop_map(|(s, mut y)| {
            y[0] = true;
            y[1] = false;
            (s, y)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in (1usize..5, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c, 1e4))) {
        let p = softmax_rows(&x);
        for r in 0..p.rows() {
            let row = p.row(r);
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_mixes_values_convexly(
        (q, k, v, sigma) in (1usize..6, 1usize..5, 1usize..4).prop_flat_map(|(t, d, dv)| (
            matrix(t, d, 3.0), matrix(t, d, 3.0), matrix(t, dv, 3.0), prop::collection::vec(0.0..1.0f64, t),
        )),
        eta in 0.0..50.0f64,
    ) {
        let tr = attend(&q, &k, &v, &sigma, eta).unwrap();
        for i in 0..q.rows() {
            prop_assert!((tr.weights.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for c in 0..v.cols() {
                let col = v.column(c);
                let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
                let x = tr.context.get(i, c);
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn raising_one_uncertainty_lowers_its_attention(
        (q, k, v, sigma, j) in (2usize..6, 1usize..5).prop_flat_map(|(t, d)| (
            matrix(t, d, 2.0), matrix(t, d, 2.0), matrix(t, 2, 1.0), prop::collection::vec(0.0..1.0f64, t), 0..t,
        )),
        eta in 0.1..20.0f64,
        bump in 0.01..1.0f64,
    ) {
        let before = attend(&q, &k, &v, &sigma, eta).unwrap();
        let mut raised = sigma.clone();
        raised[j] += bump;
        let after = attend(&q, &k, &v, &raised, eta).unwrap();
        for i in 0..q.rows() {
            prop_assert!(after.weights.get(i, j) <= before.weights.get(i, j) + 1e-15);
        }
    }

    #[test]
    fn auroc_ignores_monotone_transforms((s, y) in scored(2..40)) {
        let base = auroc(&s, &y).unwrap();
        let squashed: Vec<f64> = s.iter().map(|v| (v / 2.0).tanh() * 3.0 + 1.0).collect();
        prop_assert_eq!(auroc(&squashed, &y).unwrap(), base);
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&flipped, &y).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn platt_scaling_keeps_the_ranking((s, y) in scored(20..60)) {
        let probs: Vec<f64> = s.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let logits: Vec<f64> = probs.iter().map(|&p| logit(p)).collect();
        let platt = fit_platt(&logits, &y).unwrap();
        prop_assume!(platt.a > 0.0);
        let scaled: Vec<f64> = probs.iter().map(|&p| platt.apply(p)).collect();
        prop_assert!((auroc(&scaled, &y).unwrap() - auroc(&probs, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mc_interval_narrows_with_root_n(rounds in prop::collection::vec(0.3..0.7f64, 20..200)) {
        let (lo, hi) = ci_of_mean(&rounds, 0.95);
        let n = rounds.len() as f64;
        let mean = rounds.iter().sum::<f64>() / n;
        let sd = (rounds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!(((hi - lo) * n.sqrt() / (2.0 * sd) - z_quantile(0.95)).abs() < 1e-9);
    }

    #[test]
    fn conformal_sets_shrink_as_alpha_grows(
        (p, y) in prop::collection::vec((0.0..1.0f64, any::<bool>()), 20..120).prop_map(|v| v.into_iter().unzip::<_, _, Vec<f64>, Vec<bool>>()),
        a1 in 0.01..0.3f64,
        gap in 0.0..0.3f64,
        probe in prop::collection::vec(0.0..1.0f64, 10),
    ) {
        let wide = fit_conformal(&p, &y, a1).unwrap();
        let narrow = fit_conformal(&p, &y, a1 + gap).unwrap();
        for q in probe {
            let (w, _) = wide.predict_set(q);
            let (n, _) = narrow.predict_set(q);
            prop_assert!(w.pd || !n.pd);
            prop_assert!(w.non_pd || !n.non_pd);
        }
    }

    #[test]
    fn split_folds_partition_the_subjects(n in 15usize..80, seed in any::<u64>()) {
        // a third are pd, so every class keeps the five-subject minimum
        let subjects: BTreeMap<String, Label> =
            (0..n).map(|i| (format!("s{i:03}"), Label::from_positive(i % 3 == 0))).collect();
        let plan = make_split(&subjects, DEFAULT_RATIOS, seed).unwrap();
        let folds = [Fold::Train, Fold::Val, Fold::Test].map(|f| plan.subjects_in(f).len());
        prop_assert_eq!(folds.iter().sum::<usize>(), n);
        for s in subjects.keys() {
            prop_assert!(plan.fold_of(s).is_some());
        }
        let tiny: BTreeMap<String, Label> = subjects.into_iter().take(12).collect();
        prop_assert!(make_split(&tiny, DEFAULT_RATIOS, seed).is_err());
    }

    #[test]
    fn scalers_invert(x in (3usize..20, 1usize..5).prop_flat_map(|(r, c)| matrix(r, c, 100.0)), minmax in any::<bool>()) {
        let kind = if minmax { ScalerKind::MinMax } else { ScalerKind::Standard };
        let s = FittedScaler::fit(&x, kind).unwrap();
        let back = s.invert(&s.apply(&x).unwrap());
        prop_assert!(back.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn correlation_filter_ignores_row_order(
        x in (5usize..30, 2usize..6).prop_flat_map(|(r, c)| matrix(r, c, 1.0)),
        threshold in 0.5..0.99f64,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut seeded_rng(seed));
        let shuffled = x.select_rows(&order);
        prop_assert_eq!(fit_correlation_filter(&x, threshold).unwrap(), fit_correlation_filter(&shuffled, threshold).unwrap());
    }

    #[test]
    fn oversampling_keeps_originals_and_balances(
        (x, y) in (8usize..40).prop_flat_map(|n| (matrix(n, 3, 5.0), prop::collection::vec(any::<bool>(), n))),
        smote in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut y = y;
        y[0] = true;
        y[1] = false;
        let method = if smote { OversampleMethod::Smote } else { OversampleMethod::Random };
        let (xo, yo) = oversample_minority(&x, &y, method, 5, &mut seeded_rng(seed)).unwrap();
        prop_assert_eq!(&yo[..y.len()], &y[..]);
        prop_assert_eq!(&xo.data()[..x.len()], x.data());
        let pos = yo.iter().filter(|&&v| v).count();
        prop_assert_eq!(2 * pos, yo.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn task_tables_round_trip(subjects in 5usize..40, seed in any::<u64>()) {
        let mut spec = SyntheticCohortSpec::desk();
        spec.subjects = subjects;
        spec.seed = seed;
        let cohort = gen_synthetic_cohort(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for t in TaskKind::ALL {
            write_task_csv(&dir.path().join(format!("{t}.csv")), &cohort, t).unwrap();
        }
        let back = load_cohort_dir(dir.path(), &spec.widths(), None).unwrap();
        let by_id: BTreeMap<&str, _> = back.sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
        for s in &cohort.sessions {
            let b = by_id[s.session_id.as_str()];
            prop_assert_eq!(&b.features, &s.features);
            prop_assert_eq!(b.label, s.label);
            prop_assert_eq!(&b.demographics, &s.demographics);
            prop_assert_eq!(&b.subject_id, &s.subject_id);
        }
        prop_assert_eq!(back.sessions.len(), cohort.sessions.len());
    }
}
