//! Small Monte Carlo summaries.

use serde::Serialize;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, se: 0.0, n };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self { mean, se: (var / n as f64).sqrt(), n }
    }

    /// Standard error of a mean over clusters, each cluster reduced to its own mean first.
    pub fn clustered(xs: &[f64], cluster_len: usize) -> Self {
        assert!(cluster_len > 0 && xs.len() % cluster_len == 0);
        let means: Vec<f64> = xs
            .chunks(cluster_len)
            .map(|c| c.iter().sum::<f64>() / cluster_len as f64)
            .collect();
        let mut e = Self::from_samples(&means);
        e.n = xs.len();
        e
    }

    /// |mean - target| measured in standard errors (infinite when se is zero and they differ).
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if diff <= FLOAT_SLACK * (1.0 + target.abs()) {
            0.0
        } else if self.se > 0.0 {
            diff / self.se
        } else {
            f64::INFINITY
        }
    }
}

/// Rounding slack used wherever a Monte Carlo tolerance can collapse to zero
/// (deterministic sub-cases with zero sample variance).
pub const FLOAT_SLACK: f64 = 1e-12;

/// `|diff| <= k * se`, allowing floating-point noise when `se` is zero.
pub fn within_se(diff: f64, se: f64, k: f64) -> bool {
    diff.abs() <= k * se + FLOAT_SLACK
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constants_has_zero_se() {
        let e = Estimate::from_samples(&[2.0; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.se, 0.0);
        assert_eq!(e.z_score(2.0), 0.0);
        assert!(e.z_score(2.1).is_infinite());
    }

    #[test]
    fn clustered_se_uses_cluster_means() {
        let xs = [1.0, 1.0, 3.0, 3.0];
        let e = Estimate::clustered(&xs, 2);
        assert_eq!(e.mean, 2.0);
        assert!((e.se - 1.0).abs() < 1e-12);
    }
}
