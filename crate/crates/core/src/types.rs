//! Laws of the agent characteristics (initial wealth, risk aversion, competition weight)
//! and stratified sampling of a finite population.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{config, Error, Result};
use crate::rng::{Domain, StreamKey};

/// Smallest admissible risk aversion.
pub const ALPHA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum Law {
    Constant { value: f64 },
    /// Finite support with the given weights (normalized on use).
    #[serde(alias = "two-point")]
    Discrete { values: Vec<f64>, weights: Vec<f64> },
    Normal { mean: f64, sd: f64 },
    /// exp(mu + sigma N(0,1)); `classes` equal-mass atoms replace it where a finite
    /// support is required (risk aversion).
    LogNormal { mu: f64, sigma: f64, #[serde(default = "default_classes")] classes: usize },
}

fn default_classes() -> usize {
    8
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

impl Law {
    pub fn validate(&self, name: &str) -> Result<()> {
        match self {
            Law::Constant { value } if !value.is_finite() => Err(config(format!("{name}: value must be finite"))),
            Law::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(config(format!("{name}: need matching nonempty values and weights")));
                }
                if values.iter().any(|v| !v.is_finite()) || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(config(format!("{name}: values finite and weights positive required")));
                }
                Ok(())
            }
            Law::Normal { mean, sd } if !(mean.is_finite() && sd.is_finite() && *sd >= 0.0) => {
                Err(config(format!("{name}: normal law needs finite mean and nonnegative sd")))
            }
            Law::LogNormal { mu, sigma, classes } if !(mu.is_finite() && sigma.is_finite() && *sigma >= 0.0 && *classes >= 1) => {
                Err(config(format!("{name}: lognormal law needs finite mu, sigma >= 0 and at least one class")))
            }
            _ => Ok(()),
        }
    }

    /// Finite support with normalized weights, if the law has (or is replaced by) one.
    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Law::Constant { value } => Some(vec![(*value, 1.0)]),
            Law::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                Some(values.iter().zip(weights).map(|(v, w)| (*v, w / total)).collect())
            }
            Law::Normal { .. } => None,
            Law::LogNormal { mu, sigma, classes } => {
                let n = std_normal();
                Some(
                    (0..*classes)
                        .map(|j| {
                            let u = (j as f64 + 0.5) / *classes as f64;
                            ((mu + sigma * n.inverse_cdf(u)).exp(), 1.0 / *classes as f64)
                        })
                        .collect(),
                )
            }
        }
    }

    /// The law itself, or its equal-mass quantization when it is lognormal.
    pub fn quantized(&self) -> Law {
        match self {
            Law::LogNormal { .. } => {
                let s = self.support().expect("lognormal quantization");
                Law::Discrete { values: s.iter().map(|p| p.0).collect(), weights: s.iter().map(|p| p.1).collect() }
            }
            other => other.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Law::Normal { mean, .. } => *mean,
            Law::LogNormal { mu, sigma, .. } => (mu + 0.5 * sigma * sigma).exp(),
            _ => self.support().expect("finite support").iter().map(|(v, w)| v * w).sum(),
        }
    }

    /// E[f(X)] for laws with finite support.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Option<f64> {
        self.support().map(|s| s.iter().map(|(v, w)| f(*v) * w).sum())
    }

    pub fn min_value(&self) -> f64 {
        match self.support() {
            Some(s) => s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
            None => f64::NEG_INFINITY,
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match self {
            Law::Constant { value } => *value,
            Law::Normal { mean, sd } => mean + sd * std_normal().inverse_cdf(u),
            Law::LogNormal { mu, sigma, .. } => (mu + sigma * std_normal().inverse_cdf(u)).exp(),
            Law::Discrete { .. } => {
                let s = self.support().expect("discrete support");
                let mut acc = 0.0;
                for (v, w) in &s {
                    acc += w;
                    if u < acc - 1e-12 {
                        return *v;
                    }
                }
                s.last().expect("nonempty").0
            }
        }
    }

    /// Stratified draws: one point in each of `m` equal-probability strata, strata
    /// assigned to agents by a seeded permutation. With finite support and
    /// `m * weight` integral, every atom receives exactly its share.
    pub fn sample_stratified(&self, m: usize, key: StreamKey) -> Vec<f64> {
        let mut rng = key.rng();
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        let discrete = matches!(self, Law::Constant { .. } | Law::Discrete { .. });
        strata
            .into_iter()
            .map(|j| {
                let v: f64 = if discrete { 0.5 } else { rng.gen() };
                self.quantile((j as f64 + v) / m as f64)
            })
            .collect()
    }
}

/// One agent's characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub x0: f64,
    pub alpha: f64,
    pub rho: f64,
}

/// Joint law of independent characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeLaw {
    pub x0: Law,
    pub alpha: Law,
    pub rho: Law,
}

impl TypeLaw {
    pub fn constant(x0: f64, alpha: f64, rho: f64) -> Self {
        Self { x0: Law::Constant { value: x0 }, alpha: Law::Constant { value: alpha }, rho: Law::Constant { value: rho } }
    }

    /// Structural checks plus the two standing conditions on the law:
    /// risk aversion bounded away from zero and E[rho] != 1.
    pub fn validate(&self) -> Vec<Error> {
        let mut errs = Vec::new();
        for (name, law) in [("x0", &self.x0), ("alpha", &self.alpha), ("rho", &self.rho)] {
            if let Err(e) = law.validate(name) {
                errs.push(e);
            }
        }
        if !errs.is_empty() {
            return errs;
        }
        if matches!(self.alpha, Law::Normal { .. }) || self.alpha.min_value() < ALPHA_FLOOR {
            errs.push(config(format!(
                "risk aversion law must be bounded away from zero (support minimum {} below {ALPHA_FLOOR})",
                self.alpha.min_value()
            )));
        }
        if !matches!(self.rho, Law::Constant { .. } | Law::Discrete { .. }) {
            errs.push(config("competition weight law must be constant or discrete (bounded)"));
        } else if (self.rho.mean() - 1.0).abs() < 1e-12 {
            errs.push(Error::SingularInteraction);
        }
        errs
    }

    /// Risk aversion and competition weight with finite support; lognormal laws are quantized.
    pub fn effective(&self) -> Self {
        Self { x0: self.x0.clone(), alpha: self.alpha.quantized(), rho: self.rho.quantized() }
    }

    pub fn mean_x0(&self) -> f64 {
        self.x0.mean()
    }

    pub fn mean_rho(&self) -> f64 {
        self.rho.mean()
    }

    pub fn mean_inv_alpha(&self) -> f64 {
        self.alpha.quantized().expect(|a| 1.0 / a).expect("finite support")
    }

    /// `m` agents, each coordinate stratified on its own stream.
    pub fn sample(&self, m: usize, seed: u64) -> Vec<AgentSample> {
        let eff = self.effective();
        let key = StreamKey::new(seed, Domain::AgentType);
        let x0 = eff.x0.sample_stratified(m, key.channel(0));
        let alpha = eff.alpha.sample_stratified(m, key.channel(1));
        let rho = eff.rho.sample_stratified(m, key.channel(2));
        (0..m).map(|a| AgentSample { x0: x0[a], alpha: alpha[a], rho: rho[a] }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_allocation_is_exact() {
        let law = Law::Discrete { values: vec![1.0, 4.0], weights: vec![0.5, 0.5] };
        let xs = law.sample_stratified(1000, StreamKey::new(1, Domain::AgentType));
        assert_eq!(xs.iter().filter(|x| **x == 1.0).count(), 500);
        assert_eq!(law.expect(|a| 1.0 / a).unwrap(), 0.625);
    }

    #[test]
    fn rho_mean_one_rejected() {
        let errs = TypeLaw::constant(0.0, 2.0, 1.0).validate();
        assert!(matches!(errs[..], [Error::SingularInteraction]));
        assert!(errs[0].to_string().contains("E[rho] != 1"));
        let two = TypeLaw {
            rho: Law::Discrete { values: vec![0.5, 1.5], weights: vec![1.0, 1.0] },
            ..TypeLaw::constant(0.0, 2.0, 0.0)
        };
        assert!(matches!(two.validate()[..], [Error::SingularInteraction]));
    }

    #[test]
    fn alpha_must_stay_away_from_zero() {
        assert_eq!(TypeLaw::constant(0.0, 0.0, 0.5).validate().len(), 1);
        let normal = TypeLaw { alpha: Law::Normal { mean: 2.0, sd: 0.1 }, ..TypeLaw::constant(0.0, 2.0, 0.5) };
        assert_eq!(normal.validate().len(), 1);
    }

    #[test]
    fn lognormal_quantization_has_equal_mass() {
        let law = Law::LogNormal { mu: 0.0, sigma: 0.5, classes: 4 };
        let s = law.support().unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[1].0 > w[0].0));
        assert!((s[0].0 * s[3].0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_stratified_mean() {
        let law = Law::Normal { mean: 1.0, sd: 2.0 };
        let xs = law.sample_stratified(2000, StreamKey::new(5, Domain::AgentType));
        let m = xs.iter().sum::<f64>() / 2000.0;
        assert!((m - 1.0).abs() < 0.01);
    }
}
