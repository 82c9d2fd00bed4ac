//! Regret/violation series and the curve fits used for reporting.

/// Cumulative regret: running sum of `baseline_value - v_k`.
pub fn compute_regret(baseline_value: f64, values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for &v in values {
        acc += baseline_value - v;
        out.push(acc);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationMode {
    /// Sum of positive parts; violations never cancel.
    Strong,
    /// Positive part of the plain running sum; safe episodes cancel.
    Weak,
}

/// Cumulative constraint violation of the per-episode true cost values.
pub fn compute_violation(values: &[f64], mode: ViolationMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for &v in values {
        match mode {
            ViolationMode::Strong => {
                acc += v.max(0.0);
                out.push(acc);
            }
            ViolationMode::Weak => {
                acc += v;
                out.push(acc.max(0.0));
            }
        }
    }
    out
}

/// Least-squares slope of `ln series[k]` against `ln k` over the second half
/// of the episodes (`k` is 1-based). Entries that are not strictly positive
/// are skipped; returns 0 when fewer than two usable points remain (a flat
/// or empty tail is trivially sublinear).
pub fn fit_power_exponent(series: &[f64]) -> f64 {
    let n = series.len();
    let start = n / 2;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .skip(start)
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (((i + 1) as f64).ln(), v.ln()))
        .collect();
    least_squares_slope(&pts)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

/// Coefficient `c` of the best `c * sqrt(k)` fit (least squares) over the
/// final quarter of the series.
pub fn fit_sqrt_coefficient(series: &[f64]) -> f64 {
    let n = series.len();
    let start = n - n / 4;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in series.iter().enumerate().skip(start.min(n.saturating_sub(1))) {
        let k = (i + 1) as f64;
        num += v * k.sqrt();
        den += k;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mean of several equal-length series, pointwise.
pub fn mean_series(series: &[Vec<f64>]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let n = series[0].len();
    let mut out = vec![0.0; n];
    for s in series {
        for (o, &v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    let m = series.len() as f64;
    for o in out.iter_mut() {
        *o /= m;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn regret_arithmetic() {
        let series = compute_regret(0.5, &[0.3; 10]);
        assert!((series[9] - 2.0).abs() < 1e-12);
        // Optimal play: identically zero.
        let zero = compute_regret(0.5, &[0.5; 10]);
        assert!(zero.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn alternating_costs_strong_vs_weak() {
        let vals: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let strong = compute_violation(&vals, ViolationMode::Strong);
        let weak = compute_violation(&vals, ViolationMode::Weak);
        assert_eq!(strong[99], 50.0);
        assert_eq!(weak[99], 0.0);
    }

    #[test]
    fn always_safe_is_zero() {
        let vals = vec![-0.2; 50];
        assert!(compute_violation(&vals, ViolationMode::Strong).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn violation_matches_independent_summation() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let vals: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let strong = compute_violation(&vals, ViolationMode::Strong);
        let mut acc = 0.0;
        for (i, &v) in vals.iter().enumerate() {
            if v > 0.0 {
                acc += v;
            }
            assert!((strong[i] - acc).abs() < 1e-10);
        }
        let regret = compute_regret(0.42, &vals);
        let mut acc2 = 0.0;
        for (i, &v) in vals.iter().enumerate() {
            acc2 += 0.42 - v;
            assert!((regret[i] - acc2).abs() < 1e-10);
        }
    }

    #[test]
    fn power_fit_recovers_exponent() {
        for &gamma in &[0.5, 0.75, 1.0] {
            let series: Vec<f64> = (1..=2000).map(|k| 3.0 * (k as f64).powf(gamma)).collect();
            let got = fit_power_exponent(&series);
            assert!((got - gamma).abs() < 1e-9, "gamma {gamma} got {got}");
        }
    }

    #[test]
    fn power_fit_flat_tail_is_zero() {
        let series = vec![0.0; 100];
        assert_eq!(fit_power_exponent(&series), 0.0);
    }

    #[test]
    fn sqrt_fit_recovers_coefficient() {
        let series: Vec<f64> = (1..=1000).map(|k| 2.5 * (k as f64).sqrt()).collect();
        assert!((fit_sqrt_coefficient(&series) - 2.5).abs() < 1e-9);
    }

    #[test]
    fn mean_series_pointwise() {
        let m = mean_series(&[vec![1.0, 2.0], vec![3.0, 6.0]]);
        assert_eq!(m, vec![2.0, 4.0]);
    }
}
