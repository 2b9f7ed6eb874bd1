use serde::{Deserialize, Serialize};

use super::{Dataset, TelemetryError, FEATURE_NAMES, N_FEATURES};

pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub features: Vec<String>,
    pub ks: Vec<f64>,
    pub max_ks: f64,
    pub threshold: f64,
    pub retrain: bool,
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Per-feature KS statistic over the most recent row of every state.
pub fn drift_score(a: &Dataset, b: &Dataset, threshold: f64) -> Result<DriftReport, TelemetryError> {
    if a.is_empty() || b.is_empty() {
        return Err(TelemetryError::EmptyInput);
    }
    let column = |ds: &Dataset, f: usize| -> Vec<f64> {
        ds.transitions.iter().map(|t| t.state.last_row()[f] as f64).collect()
    };
    let ks: Vec<f64> = (0..N_FEATURES).map(|f| ks_statistic(&column(a, f), &column(b, f))).collect();
    let max_ks = ks.iter().copied().fold(0.0, f64::max);
    Ok(DriftReport {
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        ks,
        max_ks,
        threshold,
        retrain: max_ks > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of both empirical CDFs at every sample point.
    fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&x| (cdf(a, x) - cdf(b, x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let na = rng.random_range(1..40);
            let nb = rng.random_range(1..40);
            let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..8) as f64).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..8) as f64).collect();
            assert!((ks_statistic(&a, &b) - brute_ks(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn bounds() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &[0.5, 0.6]), 1.0);
    }

    #[test]
    fn separated_uniforms_are_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..0.5)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.5..1.0)).collect();
        let d = ks_statistic(&a, &b);
        assert!((d - 1.0).abs() <= 0.01);
        assert!((d - brute_ks(&a[..500], &b[..500])).abs() <= 0.01);
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(drift_score(&Dataset::default(), &Dataset::default(), 0.2), Err(TelemetryError::EmptyInput));
    }
}
