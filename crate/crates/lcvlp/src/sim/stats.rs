//! Summary statistics over trial errors.

use serde::{Deserialize, Serialize};

/// Aggregate position/rotation error statistics of a Monte Carlo run.
/// Percentiles use linear interpolation on the sorted samples; the CDF
/// fields store the percent quantiles 0..=100 of each error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mpe_m: f64,
    pub p50_m: f64,
    pub p90_m: f64,
    pub std_m: f64,
    /// Half-width of the 95% confidence interval on the MPE.
    pub mpe_ci95_m: f64,
    pub mre_deg: f64,
    pub r50_deg: f64,
    pub r90_deg: f64,
    pub cdf_ep_m: Vec<f64>,
    pub cdf_er_deg: Vec<f64>,
}

/// Linear-interpolation percentile of an ascending-sorted slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

pub(crate) fn summarize(position_errors: &[f64], rotation_errors: &[f64]) -> SummaryStats {
    let n = position_errors.len();
    assert!(n > 0 && rotation_errors.len() == n);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mpe = mean(position_errors);
    let mre = mean(rotation_errors);
    let std = if n > 1 {
        (position_errors.iter().map(|e| (e - mpe) * (e - mpe)).sum::<f64>() / (n - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let mut ep = position_errors.to_vec();
    let mut er = rotation_errors.to_vec();
    ep.sort_by(|a, b| a.partial_cmp(b).unwrap());
    er.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantiles = |sorted: &[f64]| -> Vec<f64> {
        (0..=100).map(|p| percentile(sorted, p as f64 / 100.0)).collect()
    };
    SummaryStats {
        mpe_m: mpe,
        p50_m: percentile(&ep, 0.5),
        p90_m: percentile(&ep, 0.9),
        std_m: std,
        mpe_ci95_m: 1.96 * std / (n as f64).sqrt(),
        mre_deg: mre,
        r50_deg: percentile(&er, 0.5),
        r90_deg: percentile(&er, 0.9),
        cdf_ep_m: quantiles(&ep),
        cdf_er_deg: quantiles(&er),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(percentile(&xs, 0.0), 1.0);
        assert_relative_eq!(percentile(&xs, 1.0), 4.0);
        assert_relative_eq!(percentile(&xs, 0.5), 2.5);
        assert_relative_eq!(percentile(&xs, 0.9), 3.7, epsilon = 1e-12);
    }

    #[test]
    fn summary_invariants() {
        let ep = [0.01, 0.03, 0.02, 0.05, 0.04];
        let er = [0.1, 0.3, 0.2, 0.5, 0.4];
        let s = summarize(&ep, &er);
        assert!(s.p50_m <= s.p90_m);
        assert!(s.r50_deg <= s.r90_deg);
        assert!(s.mpe_m >= 0.0 && s.std_m >= 0.0);
        assert!(s.p50_m <= s.mpe_m + 3.0 * s.std_m);
        // quantile arrays are non-decreasing and span the sample range
        for w in s.cdf_ep_m.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_relative_eq!(s.cdf_ep_m[0], 0.01);
        assert_relative_eq!(s.cdf_ep_m[100], 0.05);
    }
}
