//! Structural equation models over a [`CausalGraph`].
//!
//! Error vectors and `x` vectors handed to and returned from an [`Scm`] are
//! indexed by coordinate (see [`crate::graph`]); the diagnosis is never part
//! of them.

mod distribution;
mod document;
mod mechanism;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CausalGraph, GraphError};

pub use distribution::ErrorDistribution;
pub use document::{EdgeEndpoint, MechanismEntry, ErrorEntry, InterventionEntry, ScmDocument};
pub use mechanism::{sigmoid, Mechanism, Primitive};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid error distribution {0}")]
    InvalidDistribution(String),
    #[error("mechanism of {variable} takes {got} parameters but the vertex has {expected} parents")]
    MechanismArity {
        variable: String,
        expected: usize,
        got: usize,
    },
    #[error("vertex {0} has no parents and must use the root mechanism")]
    ParentlessNonRoot(String),
    #[error("label mechanism on non-diagnosis vertex {0}")]
    LabelOffDiagnosis(String),
    #[error("diagnosis vertex {0} requires a label mechanism")]
    DiagnosisWithoutLabel(String),
    #[error("non-finite or out-of-range parameters in mechanism of {0}")]
    InvalidParameters(String),
    #[error("expected {expected} mechanisms/distributions, got {got}")]
    Count { expected: usize, got: usize },
    #[error("vector has {got} entries, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("malformed model document: {0}")]
    Document(String),
}

/// Replacement of one error term by an action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorOverride {
    /// `do(E_i = value)`: the coordinate ignores its input.
    Fixed { value: f64 },
    /// `do(E_i)` with a fresh draw from the original marginal.
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scm {
    graph: CausalGraph,
    mechanisms: Vec<Mechanism>,
    errors: Vec<ErrorDistribution>,
    overrides: BTreeMap<usize, ErrorOverride>,
}

/// Rows of a simulated dataset, in coordinate order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub e: Array2<f64>,
    pub d: Vec<u8>,
}

impl Scm {
    /// `mechanisms` is indexed by vertex, `errors` by coordinate.
    pub fn new(
        graph: CausalGraph,
        mechanisms: Vec<Mechanism>,
        errors: Vec<ErrorDistribution>,
    ) -> Result<Self, ScmError> {
        if mechanisms.len() != graph.n() {
            return Err(ScmError::Count {
                expected: graph.n(),
                got: mechanisms.len(),
            });
        }
        if errors.len() != graph.p() {
            return Err(ScmError::Count {
                expected: graph.p(),
                got: errors.len(),
            });
        }
        for (v, mech) in mechanisms.iter().enumerate() {
            let name = graph.label(v).to_string();
            let n_parents = graph.parents(v).len();
            if mech.arity() != n_parents {
                return Err(ScmError::MechanismArity {
                    variable: name,
                    expected: n_parents,
                    got: mech.arity(),
                });
            }
            if !mech.parameters_valid() {
                return Err(ScmError::InvalidParameters(name));
            }
            if v == graph.diagnosis() {
                if !mech.is_label() {
                    return Err(ScmError::DiagnosisWithoutLabel(name));
                }
            } else if mech.is_label() {
                return Err(ScmError::LabelOffDiagnosis(name));
            } else if n_parents == 0 && *mech != Mechanism::Root {
                return Err(ScmError::ParentlessNonRoot(name));
            }
        }
        for dist in &errors {
            dist.validate()?;
        }
        Ok(Self {
            graph,
            mechanisms,
            errors,
            overrides: BTreeMap::new(),
        })
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn mechanisms(&self) -> &[Mechanism] {
        &self.mechanisms
    }

    pub fn errors(&self) -> &[ErrorDistribution] {
        &self.errors
    }

    pub fn overrides(&self) -> &BTreeMap<usize, ErrorOverride> {
        &self.overrides
    }

    pub fn p(&self) -> usize {
        self.graph.p()
    }

    /// True when every error distribution is finite discrete.
    pub fn is_discrete(&self) -> bool {
        self.errors.iter().all(ErrorDistribution::is_discrete)
    }

    pub(crate) fn with_overrides(&self, overrides: BTreeMap<usize, ErrorOverride>) -> Self {
        Self {
            overrides,
            ..self.clone()
        }
    }

    /// Effective error value of a coordinate after applying overrides.
    fn effective_error(&self, coord: usize, supplied: f64) -> f64 {
        match self.overrides.get(&coord) {
            Some(ErrorOverride::Fixed { value }) => *value,
            _ => supplied,
        }
    }

    /// `X(e)`: evaluates the mechanisms in topological order.
    pub fn push_forward(&self, e: &[f64]) -> Result<Vec<f64>, ScmError> {
        self.check_arity(e)?;
        let mut x = vec![0.0; self.p()];
        self.push_forward_into(e, &mut x);
        Ok(x)
    }

    /// Unchecked variant writing into a caller buffer of length `p`.
    pub(crate) fn push_forward_into(&self, e: &[f64], x: &mut [f64]) {
        let mut parents = Vec::with_capacity(8);
        for &v in self.graph.topo_order() {
            let Some(c) = self.graph.vertex_coord(v) else {
                continue;
            };
            let err = self.effective_error(c, e[c]);
            let mech = &self.mechanisms[v];
            x[c] = match mech {
                Mechanism::Root => err,
                _ => {
                    parents.clear();
                    parents.extend(
                        self.graph
                            .parents(v)
                            .iter()
                            .map(|&u| x[self.graph.vertex_coord(u).expect("not diagnosis")]),
                    );
                    mech.structural_part(&parents) + err
                }
            };
        }
    }

    fn diagnosis_parent_values(&self, x: &[f64]) -> Vec<f64> {
        self.graph
            .parents(self.graph.diagnosis())
            .iter()
            .map(|&u| x[self.graph.vertex_coord(u).expect("not diagnosis")])
            .collect()
    }

    /// Log-odds of `D = 1` given the endogenous values `x`.
    pub fn label_log_odds(&self, x: &[f64]) -> f64 {
        self.mechanisms[self.graph.diagnosis()].label_log_odds(&self.diagnosis_parent_values(x))
    }

    /// `P(D = 1 | x)`.
    pub fn label_probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.label_log_odds(x))
    }

    /// Recovers `e` from `x` (every non-diagnosis mechanism is additive in
    /// its own error term).
    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>, ScmError> {
        self.check_arity(x)?;
        if !self.overrides.is_empty() {
            return Err(ScmError::Unsupported(
                "submodels with clamped error terms are not invertible".into(),
            ));
        }
        let mut e = vec![0.0; self.p()];
        let mut parents = Vec::with_capacity(8);
        for c in 0..self.p() {
            let v = self.graph.coord_vertex(c);
            let mech = &self.mechanisms[v];
            e[c] = match mech {
                Mechanism::Root => x[c],
                Mechanism::Linear { .. } | Mechanism::Additive { .. } => {
                    parents.clear();
                    parents.extend(
                        self.graph
                            .parents(v)
                            .iter()
                            .map(|&u| x[self.graph.vertex_coord(u).expect("not diagnosis")]),
                    );
                    x[c] - mech.structural_part(&parents)
                }
                other => {
                    return Err(ScmError::Unsupported(format!(
                        "mechanism {} is not invertible",
                        other.name()
                    )))
                }
            };
        }
        Ok(e)
    }

    /// Draws `n` rows. Row `r` uses its own ChaCha stream of `seed`, so the
    /// output does not depend on the number of worker threads.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset, ScmError> {
        if n == 0 {
            return Err(ScmError::Precondition("sample size must be at least 1".into()));
        }
        let p = self.p();
        let rows: Vec<(Vec<f64>, Vec<f64>, u8)> = (0..n)
            .into_par_iter()
            .map(|r| {
                let mut rng = row_rng(seed, r as u64);
                let e: Vec<f64> = (0..p)
                    .map(|c| {
                        let draw = self.errors[c].sample(&mut rng);
                        self.effective_error(c, draw)
                    })
                    .collect();
                let mut x = vec![0.0; p];
                self.push_forward_into(&e, &mut x);
                let prob = self.label_probability(&x);
                let d = u8::from(rng.random::<f64>() < prob);
                (x, e, d)
            })
            .collect();
        let mut x = Array2::zeros((n, p));
        let mut e = Array2::zeros((n, p));
        let mut d = Vec::with_capacity(n);
        for (r, (xr, er, dr)) in rows.into_iter().enumerate() {
            for c in 0..p {
                x[[r, c]] = xr[c];
                e[[r, c]] = er[c];
            }
            d.push(dr);
        }
        Ok(Dataset { x, e, d })
    }

    fn check_arity(&self, v: &[f64]) -> Result<(), ScmError> {
        if v.len() != self.p() {
            Err(ScmError::Arity {
                expected: self.p(),
                got: v.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// Independent per-row random stream derived from a global seed.
pub fn row_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
