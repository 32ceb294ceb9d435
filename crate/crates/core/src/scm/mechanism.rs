//! Structural mechanisms.
//!
//! Continuous mechanisms (`root`, `linear`, `additive`) are additive in their
//! own error term, so `e_i = x_i - g(pa)` inverts them. Label mechanisms only
//! live at the diagnosis vertex and return log-odds of `D = 1`; the
//! diagnosis noise stays inside them.

use serde::{Deserialize, Serialize};

/// One per-parent primitive of an additive mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Primitive {
    /// `a * x + b`
    Affine { a: f64, b: f64 },
    /// `gain * tanh(scale * x)`
    Tanh { scale: f64, gain: f64 },
    /// `a * x^2 + b * x + c`
    Quadratic { a: f64, b: f64, c: f64 },
}

impl Primitive {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Primitive::Affine { a, b } => a * x + b,
            Primitive::Tanh { scale, gain } => gain * (scale * x).tanh(),
            Primitive::Quadratic { a, b, c } => (a * x + b) * x + c,
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Primitive::Affine { a, b } => a.is_finite() && b.is_finite(),
            Primitive::Tanh { scale, gain } => scale.is_finite() && gain.is_finite(),
            Primitive::Quadratic { a, b, c } => a.is_finite() && b.is_finite() && c.is_finite(),
        }
    }
}

/// Mechanism of one vertex. Weight and term lists follow the vertex's parents
/// in ascending vertex order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// `X = E`
    Root,
    /// `X = sum_k w_k * pa_k + E`
    Linear { weights: Vec<f64> },
    /// `X = sum_k f_k(pa_k) + E`
    Additive { terms: Vec<Primitive> },
    /// `P(D = 1 | pa) = sigmoid(intercept + sum_k w_k * pa_k)`
    LogisticLabel { intercept: f64, weights: Vec<f64> },
    /// `P(D = 1 | pa) = 1 - (1 - leak) * prod_{k : pa_k > 0} (1 - strength_k)`
    NoisyOrLabel { leak: f64, strengths: Vec<f64> },
}

impl Mechanism {
    pub fn is_label(&self) -> bool {
        matches!(self, Mechanism::LogisticLabel { .. } | Mechanism::NoisyOrLabel { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Root => "root",
            Mechanism::Linear { .. } => "linear",
            Mechanism::Additive { .. } => "additive",
            Mechanism::LogisticLabel { .. } => "logistic_label",
            Mechanism::NoisyOrLabel { .. } => "noisy_or_label",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Mechanism::Root => 0,
            Mechanism::Linear { weights } => weights.len(),
            Mechanism::Additive { terms } => terms.len(),
            Mechanism::LogisticLabel { weights, .. } => weights.len(),
            Mechanism::NoisyOrLabel { strengths, .. } => strengths.len(),
        }
    }

    pub(crate) fn parameters_valid(&self) -> bool {
        match self {
            Mechanism::Root => true,
            Mechanism::Linear { weights } => weights.iter().all(|w| w.is_finite()),
            Mechanism::Additive { terms } => terms.iter().all(Primitive::is_finite),
            Mechanism::LogisticLabel { intercept, weights } => {
                intercept.is_finite() && weights.iter().all(|w| w.is_finite())
            }
            Mechanism::NoisyOrLabel { leak, strengths } => {
                (0.0..=1.0).contains(leak) && strengths.iter().all(|s| (0.0..=1.0).contains(s))
            }
        }
    }

    /// Deterministic part `g(pa)` of a continuous mechanism.
    pub fn structural_part(&self, parents: &[f64]) -> f64 {
        match self {
            Mechanism::Root => 0.0,
            Mechanism::Linear { weights } => {
                weights.iter().zip(parents).map(|(w, x)| w * x).sum()
            }
            Mechanism::Additive { terms } => {
                terms.iter().zip(parents).map(|(t, &x)| t.eval(x)).sum()
            }
            Mechanism::LogisticLabel { .. } | Mechanism::NoisyOrLabel { .. } => {
                unreachable!("label mechanisms have no structural part")
            }
        }
    }

    /// Log-odds of `D = 1` for a label mechanism; `±inf` for certain labels.
    pub fn label_log_odds(&self, parents: &[f64]) -> f64 {
        match self {
            Mechanism::LogisticLabel { intercept, weights } => {
                intercept + weights.iter().zip(parents).map(|(w, x)| w * x).sum::<f64>()
            }
            Mechanism::NoisyOrLabel { leak, strengths } => {
                let mut q = 1.0 - leak;
                for (s, &x) in strengths.iter().zip(parents) {
                    if x > 0.0 {
                        q *= 1.0 - s;
                    }
                }
                let p = 1.0 - q;
                p.ln() - q.ln()
            }
            _ => unreachable!("not a label mechanism"),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}
