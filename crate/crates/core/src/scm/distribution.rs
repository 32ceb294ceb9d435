//! Marginal error distributions.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ScmError;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorDistribution {
    Uniform { a: f64, b: f64 },
    Laplace { mu: f64, b: f64 },
    Gaussian { mu: f64, sigma: f64 },
    Discrete { support: Vec<f64>, probs: Vec<f64> },
}

impl ErrorDistribution {
    /// Laplace with the given standard deviation (`b = sd / sqrt 2`).
    pub fn laplace_with_sd(mu: f64, sd: f64) -> Self {
        ErrorDistribution::Laplace {
            mu,
            b: sd / std::f64::consts::SQRT_2,
        }
    }

    pub fn bernoulli(p: f64) -> Self {
        ErrorDistribution::Discrete {
            support: vec![0.0, 1.0],
            probs: vec![1.0 - p, p],
        }
    }

    pub fn validate(&self) -> Result<(), ScmError> {
        let ok = match self {
            ErrorDistribution::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
            ErrorDistribution::Laplace { mu, b } => mu.is_finite() && b.is_finite() && *b > 0.0,
            ErrorDistribution::Gaussian { mu, sigma } => {
                mu.is_finite() && sigma.is_finite() && *sigma > 0.0
            }
            ErrorDistribution::Discrete { support, probs } => {
                if support.is_empty() || support.len() != probs.len() {
                    false
                } else {
                    let total: f64 = probs.iter().sum();
                    support.iter().all(|s| s.is_finite())
                        && probs.iter().all(|&p| p.is_finite() && p >= 0.0)
                        && (total - 1.0).abs() <= PROB_SUM_TOL
                }
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ScmError::InvalidDistribution(format!("{self:?}")))
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ErrorDistribution::Discrete { .. })
    }

    /// `(value, probability)` atoms of a discrete distribution.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            ErrorDistribution::Discrete { support, probs } => {
                Some(support.iter().copied().zip(probs.iter().copied()).collect())
            }
            _ => None,
        }
    }

    /// Probability mass at `x` (discrete only; continuous yields `None`).
    pub fn mass(&self, x: f64) -> Option<f64> {
        self.atoms().map(|atoms| {
            atoms
                .iter()
                .filter(|(v, _)| *v == x)
                .map(|(_, p)| p)
                .sum()
        })
    }

    pub fn mean(&self) -> f64 {
        match self {
            ErrorDistribution::Uniform { a, b } => 0.5 * (a + b),
            ErrorDistribution::Laplace { mu, .. } => *mu,
            ErrorDistribution::Gaussian { mu, .. } => *mu,
            ErrorDistribution::Discrete { support, probs } => {
                support.iter().zip(probs).map(|(s, p)| s * p).sum()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ErrorDistribution::Uniform { a, b } => (b - a).powi(2) / 12.0,
            ErrorDistribution::Laplace { b, .. } => 2.0 * b * b,
            ErrorDistribution::Gaussian { sigma, .. } => sigma * sigma,
            ErrorDistribution::Discrete { support, probs } => {
                let m = self.mean();
                support
                    .iter()
                    .zip(probs)
                    .map(|(s, p)| p * (s - m).powi(2))
                    .sum()
            }
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ErrorDistribution::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            ErrorDistribution::Laplace { mu, b } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            ErrorDistribution::Gaussian { mu, sigma } => Normal::new(*mu, *sigma)
                .expect("validated parameters")
                .sample(rng),
            ErrorDistribution::Discrete { support, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, p) in support.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *s;
                    }
                }
                // rounding left `acc` a hair below one
                support[probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_must_normalize() {
        assert!(ErrorDistribution::bernoulli(0.3).validate().is_ok());
        let bad = ErrorDistribution::Discrete {
            support: vec![0.0, 1.0],
            probs: vec![0.5, 0.5 + 1e-9],
        };
        assert!(bad.validate().is_err());
        let empty = ErrorDistribution::Discrete {
            support: vec![],
            probs: vec![],
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn laplace_moments_by_sampling() {
        let d = ErrorDistribution::Laplace { mu: 0.5, b: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 5.0 * (8.0f64 / n as f64).sqrt());
        assert!((var - 8.0).abs() < 0.2);
    }
}
