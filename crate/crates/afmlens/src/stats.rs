//! Shared order-statistic helpers.

/// Sorts a copy of `values` ascending with a total order on floats.
///
/// Callers must have rejected NaN beforehand; NaN sorts last and will
/// surface in extremes rather than silently vanish.
pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Quantile by linear interpolation between order statistics (the same
/// convention as R type 7): position (n-1)*q over the sorted values.
///
/// pre: `values` non-empty and sorted ascending; q in [0, 1].
pub(crate) fn quantile_type7_sorted(sorted_values: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted_values.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let n = sorted_values.len();
    if n == 1 {
        return sorted_values[0];
    }
    let pos = (n - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo])
}

/// Convenience: sorts then interpolates.
pub(crate) fn quantile_type7(values: &[f64], q: f64) -> f64 {
    quantile_type7_sorted(&sorted(values), q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_between_order_statistics() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_type7(&v, 0.95) - 95.05).abs() < 1e-12);
        assert_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_eq!(quantile_type7(&v, 1.0), 100.0);

        let tens: Vec<f64> = (1..=10).map(|i| 10.0 * i as f64).collect();
        assert!((quantile_type7(&tens, 0.95) - 95.5).abs() < 1e-9);
    }

    #[test]
    fn single_value_is_every_quantile() {
        for q in [0.0, 0.25, 0.5, 0.95, 1.0] {
            assert_eq!(quantile_type7(&[7.0], q), 7.0);
        }
    }

    #[test]
    fn monotone_in_q() {
        let v = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=100 {
            let q = i as f64 / 100.0;
            let x = quantile_type7(&v, q);
            assert!(x >= prev);
            prev = x;
        }
    }
}
