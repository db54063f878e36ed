//! Hypothesis tests used for subgroup and disease-duration analyses.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Proportion `x/n` with a normal-approximation 95% interval half-width.
pub fn proportion_ci(x: u64, n: u64) -> Result<(f64, f64)> {
    if n == 0 || x > n {
        return Err(Error::input(format!("invalid proportion {x}/{n}")));
    }
    let p = x as f64 / n as f64;
    Ok((p, 1.96 * (p * (1.0 - p) / n as f64).sqrt()))
}

/// Pooled two-proportion z-test. Returns `(z, two-sided p)`; zero pooled
/// variance gives `(0, 1)`.
pub fn two_proportion_ztest(x1: u64, n1: u64, x2: u64, n2: u64) -> Result<(f64, f64)> {
    if n1 == 0 || n2 == 0 || x1 > n1 || x2 > n2 {
        return Err(Error::input("z-test needs 0 <= x <= n and n > 0"));
    }
    let (p1, p2) = (x1 as f64 / n1 as f64, x2 as f64 / n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return Ok((0.0, 1.0));
    }
    let z = (p1 - p2) / se;
    Ok((z, two_sided_normal_p(z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    /// Sample odds ratio `ad/bc`.
    pub odds_ratio: f64,
    /// Conditional maximum-likelihood odds ratio given the margins.
    pub conditional_odds_ratio: f64,
    pub p_value: f64,
}

/// Fisher's exact test on `[[a, b], [c, d]]`.
///
/// The two-sided p-value sums the hypergeometric probabilities of every
/// table with the same margins that is no more likely than the observed one.
pub fn fisher_exact_2x2(table: [[u64; 2]; 2]) -> Result<FisherResult> {
    let [[a, b], [c, d]] = table;
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let n = r1 + r2;
    if r1 == 0 || r2 == 0 || c1 == 0 || b + d == 0 {
        return Err(Error::input("fisher test needs every margin to be positive"));
    }
    let lo = c1.saturating_sub(r2);
    let hi = c1.min(r1);
    let ln_total = ln_binomial(n, c1);
    let ln_p = |x: u64| ln_binomial(r1, x) + ln_binomial(r2, c1 - x) - ln_total;
    let observed = ln_p(a);
    let p_value: f64 = (lo..=hi)
        .map(ln_p)
        .filter(|&l| l <= observed + 1e-7)
        .map(f64::exp)
        .sum::<f64>()
        .min(1.0);

    let odds_ratio = if b * c == 0 {
        if a * d == 0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        (a * d) as f64 / (b * c) as f64
    };
    Ok(FisherResult {
        odds_ratio,
        conditional_odds_ratio: conditional_mle(a, lo, hi, &ln_p),
        p_value,
    })
}

/// Solves `E_ω[X] = a` for the noncentral hypergeometric by bisection on `ln ω`.
fn conditional_mle(a: u64, lo: u64, hi: u64, ln_p: &dyn Fn(u64) -> f64) -> f64 {
    if a == lo {
        return 0.0;
    }
    if a == hi {
        return f64::INFINITY;
    }
    let support: Vec<(f64, f64)> = (lo..=hi).map(|x| (x as f64, ln_p(x))).collect();
    let mean_at = |t: f64| {
        let m = support
            .iter()
            .map(|&(x, l)| l + x * t)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for &(x, l) in &support {
            let w = (l + x * t - m).exp();
            num += x * w;
            den += w;
        }
        num / den
    };
    let target = a as f64;
    let (mut left, mut right) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (left + right);
        if mean_at(mid) < target {
            left = mid;
        } else {
            right = mid;
        }
    }
    (0.5 * (left + right)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallResult {
    pub tau: f64,
    pub p_value: f64,
    /// Whether the p-value came from full permutation enumeration.
    pub exact: bool,
}

pub const KENDALL_EXACT_MAX_N: usize = 8;

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn tau_b(x: &[f64], y: &[f64]) -> Option<(f64, i64)> {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (sign(x[i] - x[j]), sign(y[i] - y[j]));
            s += a * b;
            tx += (a == 0) as i64;
            ty += (b == 0) as i64;
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let den = (((n0 - tx) * (n0 - ty)) as f64).sqrt();
    (den > 0.0).then(|| (s as f64 / den, s))
}

fn tie_sums(v: &[f64]) -> (f64, f64, f64) {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        a += t * (t - 1.0) * (2.0 * t + 5.0);
        b += t * (t - 1.0) * (t - 2.0);
        c += t * (t - 1.0);
        i = j + 1;
    }
    (a, b, c)
}

/// Kendall's tau-b with a two-sided p-value: exact over all permutations of
/// `y` for `n <= 8`, otherwise the tie-corrected normal approximation.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<KendallResult> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::input("kendall tau needs two equal-length samples of size >= 2"));
    }
    let (tau, s) = tau_b(x, y).ok_or_else(|| Error::input("kendall tau undefined: a sample is all tied"))?;
    if n <= KENDALL_EXACT_MAX_N {
        let mut perm = y.to_vec();
        let (mut hits, mut total) = (0u64, 0u64);
        permute(&mut perm, 0, &mut |p| {
            total += 1;
            if let Some((t, _)) = tau_b(x, p) {
                if t.abs() >= tau.abs() - 1e-12 {
                    hits += 1;
                }
            }
        });
        return Ok(KendallResult {
            tau,
            p_value: hits as f64 / total as f64,
            exact: true,
        });
    }
    let nf = n as f64;
    let (xa, xb, xc) = tie_sums(x);
    let (ya, yb, yc) = tie_sums(y);
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - xa - ya) / 18.0
        + xb * yb / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
        + xc * yc / (2.0 * nf * (nf - 1.0));
    Ok(KendallResult {
        tau,
        p_value: two_sided_normal_p(s as f64 / var.sqrt()),
        exact: false,
    })
}

fn permute(v: &mut [f64], k: usize, visit: &mut dyn FnMut(&[f64])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn choose(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    fn fisher_oracle(t: [[u64; 2]; 2]) -> f64 {
        let [[a, b], [c, d]] = t;
        let (r1, r2, c1) = (a + b, c + d, a + c);
        let prob = |x: u64| choose(r1, x) * choose(r2, c1 - x) / choose(r1 + r2, c1);
        let obs = prob(a);
        let mut p = 0.0;
        for x in 0..=c1.min(r1) {
            if c1 - x <= r2 && prob(x) <= obs * (1.0 + 1e-7) {
                p += prob(x);
            }
        }
        p.min(1.0)
    }

    #[test]
    fn ztest_examples() {
        assert_eq!(two_proportion_ztest(10, 50, 10, 50).unwrap(), (0.0, 1.0));
        assert_eq!(two_proportion_ztest(0, 5, 0, 9).unwrap(), (0.0, 1.0));
        let (z, p) = two_proportion_ztest(12, 85, 5, 77).unwrap();
        assert!((z - 1.581229).abs() < 1e-6, "{z}");
        assert!((p - 0.11).abs() < 0.03, "{p}");
    }

    #[test]
    fn fisher_examples() {
        let r = fisher_exact_2x2([[1, 1], [1, 1]]).unwrap();
        assert_eq!((r.odds_ratio, r.p_value), (1.0, 1.0));
        assert!((r.conditional_odds_ratio - 1.0).abs() < 1e-9);
        let r = fisher_exact_2x2([[1, 17], [9, 109]]).unwrap();
        assert!((r.odds_ratio - 0.71).abs() < 0.005);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(fisher_exact_2x2([[0, 0], [3, 4]]).is_err());
    }

    #[test]
    fn fisher_matches_enumeration() {
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            let t = [
                [rng.random_range(0..12), rng.random_range(1..12)],
                [rng.random_range(1..12), rng.random_range(0..12)],
            ];
            let p = fisher_exact_2x2(t).unwrap().p_value;
            assert!((p - fisher_oracle(t)).abs() < 1e-10, "{t:?}");
        }
    }

    #[test]
    fn kendall_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&x, &x).unwrap().tau, 1.0);
        assert_eq!(kendall_tau(&x, &neg).unwrap().tau, -1.0);
        // 2 of 120 permutations reach |tau| = 1
        assert!((kendall_tau(&x, &x).unwrap().p_value - 2.0 / 120.0).abs() < 1e-15);
        assert!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn kendall_large_sample_uses_normal_approximation() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64).collect();
        let r = kendall_tau(&x, &y).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn proportion_interval_matches_reported_half_width() {
        let (p, h) = proportion_ci(12, 85).unwrap();
        assert!((p - 0.141).abs() < 1e-3 && (h - 0.074).abs() < 1e-3);
    }
}
