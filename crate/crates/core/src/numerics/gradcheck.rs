/// Compares an analytic gradient against central differences.
///
/// `f` returns the scalar value and its analytic gradient at a point. The
/// step for coordinate `i` is `h·max(1, |x_i|)`. The result is
/// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, x: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length");
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = probe[i];
        let step = h * orig.abs().max(1.0);
        probe[i] = orig + step;
        let up = f(&probe).0;
        probe[i] = orig - step;
        let down = f(&probe).0;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_norm_is_exact() {
        let f = |x: &[f64]| (0.5 * x.iter().map(|v| v * v).sum::<f64>(), x.to_vec());
        let err = grad_check(f, &[0.3, -1.7, 4.0, 12.0], 1e-5);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let f = |x: &[f64]| (x[0] * x[0], vec![x[0]]);
        assert!(grad_check(f, &[2.0], 1e-5) > 0.4);
    }
}
