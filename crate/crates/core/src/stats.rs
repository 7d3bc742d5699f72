//! Small numeric helpers shared across modules.

/// Pinball (quantile) loss of forecast `forecast` for outcome `actual` at level `q`.
#[inline]
pub fn pinball(actual: f64, forecast: f64, q: f64) -> f64 {
    if actual >= forecast {
        q * (actual - forecast)
    } else {
        (1.0 - q) * (forecast - actual)
    }
}

/// Lower empirical quantile: the smallest sample value `v` with
/// `P(X <= v) >= q`. Sorts `values` in place.
///
/// This order statistic minimises the summed pinball loss at level `q`.
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    values.sort_by(|a, b| a.total_cmp(b));
    quantile_of_sorted(values, q)
}

pub fn quantile_of_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_quantile_minimises_pinball() {
        let sample = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let mut v = sample.to_vec();
            let est = empirical_quantile(&mut v, q);
            let loss = |c: f64| sample.iter().map(|&y| pinball(y, c, q)).sum::<f64>();
            for &c in &sample {
                assert!(loss(est) <= loss(c) + 1e-12, "q={q}");
            }
        }
    }

    #[test]
    fn pinball_branches() {
        assert_eq!(pinball(5.0, 4.0, 0.5), 0.5);
        assert_eq!(pinball(4.0, 4.0, 0.3), 0.0);
        assert!((pinball(8.0, 10.0, 0.9) - 0.2).abs() < 1e-15);
    }
}
