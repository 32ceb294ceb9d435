//! Interventional and backtracking counterfactuals.
//!
//! Interventional queries run abduction (posterior over `E` given evidence),
//! action (a submodel with some error terms replaced) and prediction.
//! Backtracking queries keep the mechanisms intact and instead move the
//! error terms through a [`BacktrackingKernel`]. Discrete models are handled
//! by exact enumeration of the error space; continuous models only admit
//! point-mass abduction from a full patient.

mod kernel;
mod verify;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scm::{row_rng, ErrorDistribution, ErrorOverride, Scm, ScmError};

pub use kernel::{BacktrackingKernel, CoordinateKernel, KernelError};
pub use verify::{
    verify_all, verify_equivalence, EquivalenceReport, PatientEquivalence, SetEquivalence,
    TermPair, VerificationSummary,
};

/// Largest error space enumerated exactly.
pub const MAX_ENUMERATED_STATES: usize = 1 << 22;

/// Default Monte Carlo sample count for continuous prediction.
pub const DEFAULT_SAMPLES: usize = 10_000;

const MATCH_TOL: f64 = 1e-9;
const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CounterfactualError {
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("evidence has probability zero")]
    InconsistentEvidence,
    #[error("unsupported query: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    /// `do(E_V = values)`, values aligned with the sorted targets.
    Point { values: Vec<f64> },
    /// `E*_V = do(E_V)` drawn fresh from `P(E_V)`.
    StochasticCopy,
}

/// Action on a set of error coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub targets: BTreeSet<usize>,
    pub kind: ActionKind,
}

impl Action {
    pub fn point(targets: BTreeSet<usize>, values: Vec<f64>) -> Self {
        Self {
            targets,
            kind: ActionKind::Point { values },
        }
    }

    pub fn stochastic_copy(targets: BTreeSet<usize>) -> Self {
        Self {
            targets,
            kind: ActionKind::StochasticCopy,
        }
    }

    fn validate(&self, p: usize) -> Result<(), CounterfactualError> {
        if self.targets.is_empty() {
            return Err(CounterfactualError::InvalidAction("empty target set".into()));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= p) {
            return Err(CounterfactualError::InvalidAction(format!(
                "target coordinate {t} out of range (p = {p})"
            )));
        }
        if let ActionKind::Point { values } = &self.kind {
            if values.len() != self.targets.len() || values.iter().any(|v| !v.is_finite()) {
                return Err(CounterfactualError::InvalidAction(
                    "point values must be finite and match the targets".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Submodel with the action's error terms replaced; other mechanisms are
/// untouched.
pub fn do_submodel(scm: &Scm, action: &Action) -> Result<Scm, CounterfactualError> {
    action.validate(scm.p())?;
    let mut overrides = scm.overrides().clone();
    match &action.kind {
        ActionKind::Point { values } => {
            for (&t, &value) in action.targets.iter().zip(values) {
                overrides.insert(t, ErrorOverride::Fixed { value });
            }
        }
        ActionKind::StochasticCopy => {
            for &t in &action.targets {
                overrides.insert(t, ErrorOverride::Fresh);
            }
        }
    }
    Ok(scm.with_overrides(overrides))
}

/// Observed value of one vertex (the diagnosis takes 0 or 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub variable: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// The full factual error vector of a patient.
    Patient { e: Vec<f64> },
    Observed { observations: Vec<Observation> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualQuery {
    pub evidence: Evidence,
    pub action: Option<Action>,
    /// Target vertices, possibly including the diagnosis.
    pub targets: Vec<usize>,
}

/// Evidence for a backtracking query: `v*` constrains the counterfactual
/// world, `z` the factual one.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackEvidence {
    pub counterfactual: Vec<Observation>,
    pub factual: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub values: Vec<f64>,
    pub weight: f64,
}

/// Distribution over joint target values. `stderr` is present when the
/// weights came from Monte Carlo sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub targets: Vec<usize>,
    pub outcomes: Vec<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

impl OutcomeDistribution {
    pub fn total_weight(&self) -> f64 {
        self.outcomes.iter().map(|o| o.weight).sum()
    }

    /// Marginal probability that target `vertex` equals `value`.
    pub fn probability(&self, vertex: usize, value: f64) -> f64 {
        let Some(k) = self.targets.iter().position(|&t| t == vertex) else {
            return 0.0;
        };
        self.outcomes
            .iter()
            .filter(|o| (o.values[k] - value).abs() <= MERGE_TOL)
            .map(|o| o.weight)
            .sum()
    }
}

fn matches(observed: f64, actual: f64) -> bool {
    (observed - actual).abs() <= MATCH_TOL * actual.abs().max(1.0)
}

/// Weight of `observations` against a world with endogenous values `x`;
/// diagnosis observations contribute their label probability.
fn evidence_weight(scm: &Scm, x: &[f64], observations: &[Observation]) -> Result<f64, CounterfactualError> {
    let graph = scm.graph();
    let mut w = 1.0;
    for obs in observations {
        if obs.variable >= graph.n() {
            return Err(CounterfactualError::Unsupported(format!(
                "observation on unknown vertex {}",
                obs.variable
            )));
        }
        match graph.vertex_coord(obs.variable) {
            Some(c) => {
                if !matches(obs.value, x[c]) {
                    return Ok(0.0);
                }
            }
            None => {
                let p1 = scm.label_probability(x);
                w *= if obs.value == 1.0 {
                    p1
                } else if obs.value == 0.0 {
                    1.0 - p1
                } else {
                    return Err(CounterfactualError::Unsupported(
                        "the diagnosis only takes values 0 and 1".into(),
                    ));
                };
            }
        }
    }
    Ok(w)
}

/// Enumerates a product of discrete atoms: `(state, probability)` pairs in
/// mixed-radix order with coordinate 0 most significant.
pub(crate) fn enumerate_product(atoms: &[Vec<(f64, f64)>]) -> Result<Vec<(Vec<f64>, f64)>, CounterfactualError> {
    let total = atoms
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .filter(|&t| t <= MAX_ENUMERATED_STATES)
        .ok_or_else(|| CounterfactualError::Unsupported("error space too large to enumerate".into()))?;
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; atoms.len()];
    for _ in 0..total {
        let mut state = Vec::with_capacity(atoms.len());
        let mut prob = 1.0;
        for (c, &i) in idx.iter().enumerate() {
            let (v, q) = atoms[c][i];
            state.push(v);
            prob *= q;
        }
        out.push((state, prob));
        for c in (0..atoms.len()).rev() {
            idx[c] += 1;
            if idx[c] < atoms[c].len() {
                break;
            }
            idx[c] = 0;
        }
    }
    Ok(out)
}

fn discrete_atoms(scm: &Scm) -> Result<Vec<Vec<(f64, f64)>>, CounterfactualError> {
    scm.errors()
        .iter()
        .map(|d| {
            d.atoms()
                .ok_or_else(|| CounterfactualError::Unsupported("error space is not discrete".into()))
        })
        .collect()
}

/// Probability of a full error vector under a discrete model.
pub(crate) fn point_mass(scm: &Scm, e: &[f64]) -> f64 {
    scm.errors()
        .iter()
        .zip(e)
        .map(|(d, &v)| d.mass(v).unwrap_or(0.0))
        .product()
}

/// Abduction: posterior over full error vectors.
fn abduct(scm: &Scm, evidence: &Evidence) -> Result<Vec<(Vec<f64>, f64)>, CounterfactualError> {
    match evidence {
        Evidence::Patient { e } => {
            if e.len() != scm.p() {
                return Err(ScmError::Arity {
                    expected: scm.p(),
                    got: e.len(),
                }
                .into());
            }
            if scm.is_discrete() && point_mass(scm, e) <= 0.0 {
                return Err(CounterfactualError::InconsistentEvidence);
            }
            Ok(vec![(e.clone(), 1.0)])
        }
        Evidence::Observed { observations } if scm.is_discrete() => {
            let mut x = vec![0.0; scm.p()];
            let mut posterior = Vec::new();
            let mut total = 0.0;
            for (state, prob) in enumerate_product(&discrete_atoms(scm)?)? {
                if prob <= 0.0 {
                    continue;
                }
                scm.push_forward_into(&state, &mut x);
                let w = prob * evidence_weight(scm, &x, observations)?;
                if w > 0.0 {
                    total += w;
                    posterior.push((state, w));
                }
            }
            if total <= 0.0 {
                return Err(CounterfactualError::InconsistentEvidence);
            }
            for (_, w) in &mut posterior {
                *w /= total;
            }
            Ok(posterior)
        }
        Evidence::Observed { observations } => {
            // continuous: point-mass abduction needs every non-diagnosis vertex
            let graph = scm.graph();
            let mut x = vec![f64::NAN; scm.p()];
            for obs in observations {
                if let Some(c) = graph.vertex_coord(obs.variable) {
                    x[c] = obs.value;
                }
            }
            if x.iter().any(|v| v.is_nan()) {
                return Err(CounterfactualError::Unsupported(
                    "partial evidence in a continuous model does not give a point-mass abduction".into(),
                ));
            }
            let e = scm.invert(&x)?;
            if evidence_weight(scm, &x, observations)? <= 0.0 {
                return Err(CounterfactualError::InconsistentEvidence);
            }
            Ok(vec![(e, 1.0)])
        }
    }
}

/// Collects weighted worlds into a distribution over target values.
struct Predictor<'a> {
    scm: &'a Scm,
    targets: &'a [usize],
    outcomes: Vec<(Vec<f64>, f64)>,
    x: Vec<f64>,
    /// Observed diagnosis value in the predicted world, if any.
    fixed_d: Option<f64>,
}

impl<'a> Predictor<'a> {
    fn new(scm: &'a Scm, targets: &'a [usize]) -> Result<Self, CounterfactualError> {
        if let Some(&t) = targets.iter().find(|&&t| t >= scm.graph().n()) {
            return Err(CounterfactualError::Unsupported(format!("unknown target vertex {t}")));
        }
        Ok(Self {
            scm,
            targets,
            outcomes: Vec::new(),
            x: vec![0.0; scm.p()],
            fixed_d: None,
        })
    }

    fn add(&mut self, e: &[f64], weight: f64) {
        if weight == 0.0 {
            return;
        }
        self.scm.push_forward_into(e, &mut self.x);
        let graph = self.scm.graph();
        let mut values = Vec::with_capacity(self.targets.len());
        let mut d_slot = None;
        for (k, &t) in self.targets.iter().enumerate() {
            match graph.vertex_coord(t) {
                Some(c) => values.push(self.x[c]),
                None => {
                    d_slot = Some(k);
                    values.push(0.0);
                }
            }
        }
        match (d_slot, self.fixed_d) {
            (None, _) => self.outcomes.push((values, weight)),
            (Some(k), Some(d)) => {
                values[k] = d;
                self.outcomes.push((values, weight));
            }
            (Some(k), None) => {
                let p1 = self.scm.label_probability(&self.x);
                let mut with_one = values.clone();
                with_one[k] = 1.0;
                self.outcomes.push((values, weight * (1.0 - p1)));
                self.outcomes.push((with_one, weight * p1));
            }
        }
    }

    fn finish(mut self, samples: Option<usize>) -> OutcomeDistribution {
        self.outcomes.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut merged: Vec<Outcome> = Vec::new();
        for (values, weight) in self.outcomes {
            match merged.last_mut() {
                Some(last)
                    if last
                        .values
                        .iter()
                        .zip(&values)
                        .all(|(a, b)| (a - b).abs() <= MERGE_TOL) =>
                {
                    last.weight += weight
                }
                _ => merged.push(Outcome { values, weight }),
            }
        }
        merged.retain(|o| o.weight > 0.0);
        let stderr = samples.map(|n| {
            merged
                .iter()
                .map(|o| (o.weight * (1.0 - o.weight) / n as f64).max(0.0).sqrt())
                .collect()
        });
        OutcomeDistribution {
            targets: self.targets.to_vec(),
            outcomes: merged,
            stderr,
            samples,
        }
    }
}

/// Interventional counterfactual: abduction, action, prediction.
///
/// Fresh error terms of the action are enumerated when their marginals are
/// discrete and sampled (`samples` draws, `seed`) otherwise.
pub fn interventional_counterfactual(
    scm: &Scm,
    query: &CounterfactualQuery,
    samples: usize,
    seed: u64,
) -> Result<OutcomeDistribution, CounterfactualError> {
    let posterior = abduct(scm, &query.evidence)?;
    let submodel = match &query.action {
        Some(action) => do_submodel(scm, action)?,
        None => scm.clone(),
    };
    let fresh: Vec<usize> = submodel
        .overrides()
        .iter()
        .filter(|(_, o)| matches!(o, ErrorOverride::Fresh))
        .map(|(&c, _)| c)
        .collect();
    let mut predictor = Predictor::new(&submodel, &query.targets)?;
    if query.action.is_none() {
        // without an action the predicted world is the factual one
        if let Evidence::Observed { observations } = &query.evidence {
            let d = scm.graph().diagnosis();
            predictor.fixed_d = observations.iter().find(|o| o.variable == d).map(|o| o.value);
        }
    }

    let fresh_atoms: Option<Vec<Vec<(f64, f64)>>> = fresh
        .iter()
        .map(|&c| scm.errors()[c].atoms())
        .collect();
    match fresh_atoms {
        Some(atoms) => {
            let draws = enumerate_product(&atoms)?;
            for (e, w) in &posterior {
                let mut world = e.clone();
                for (values, q) in &draws {
                    for (&c, &v) in fresh.iter().zip(values) {
                        world[c] = v;
                    }
                    predictor.add(&world, w * q);
                }
            }
            Ok(predictor.finish(None))
        }
        None => {
            if samples == 0 {
                return Err(CounterfactualError::Unsupported("zero Monte Carlo samples".into()));
            }
            let dists: Vec<&ErrorDistribution> = fresh.iter().map(|&c| &scm.errors()[c]).collect();
            for (e, w) in &posterior {
                let mut world = e.clone();
                for j in 0..samples {
                    let mut rng = row_rng(seed, j as u64);
                    for (&c, d) in fresh.iter().zip(&dists) {
                        world[c] = d.sample(&mut rng);
                    }
                    predictor.add(&world, w / samples as f64);
                }
            }
            Ok(predictor.finish(Some(samples)))
        }
    }
}

/// Backtracking counterfactual: abduction over `P(E*, E)`, marginalization
/// of `E`, prediction through the unmodified mechanisms.
pub fn backtracking_counterfactual(
    scm: &Scm,
    kernel: &BacktrackingKernel,
    evidence: &BacktrackEvidence,
    targets: &[usize],
) -> Result<OutcomeDistribution, CounterfactualError> {
    let posterior = abduct(scm, &evidence.factual)?;
    let mut x = vec![0.0; scm.p()];

    let mut counterfactual: BTreeMap<Vec<u64>, (Vec<f64>, f64)> = BTreeMap::new();
    let mut push = |e_star: Vec<f64>, w: f64| {
        let key = e_star.iter().map(|v| v.to_bits()).collect();
        counterfactual.entry(key).or_insert((e_star, 0.0)).1 += w;
    };
    match kernel {
        BacktrackingKernel::Degenerate => {
            for (e, w) in posterior {
                scm.push_forward_into(&e, &mut x);
                let cw = w * evidence_weight(scm, &x, &evidence.counterfactual)?;
                if cw > 0.0 {
                    push(e, cw);
                }
            }
        }
        BacktrackingKernel::DiscreteTable { coordinates } => {
            if coordinates.len() != scm.p() {
                return Err(KernelError::Shape(format!(
                    "kernel covers {} coordinates, model has {}",
                    coordinates.len(),
                    scm.p()
                ))
                .into());
            }
            for (e, w) in posterior {
                let rows = coordinates
                    .iter()
                    .zip(&e)
                    .enumerate()
                    .map(|(c, (k, &v))| {
                        let a = k.index_of(v).ok_or_else(|| {
                            KernelError::Shape(format!("value {v} of coordinate {c} not in kernel support"))
                        })?;
                        Ok(k.support.iter().copied().zip(k.table[a].iter().copied()).collect())
                    })
                    .collect::<Result<Vec<Vec<(f64, f64)>>, KernelError>>()?;
                for (e_star, q) in enumerate_product(&rows)? {
                    if q <= 0.0 {
                        continue;
                    }
                    scm.push_forward_into(&e_star, &mut x);
                    let cw = w * q * evidence_weight(scm, &x, &evidence.counterfactual)?;
                    if cw > 0.0 {
                        push(e_star, cw);
                    }
                }
            }
        }
    }
    let total: f64 = counterfactual.values().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(CounterfactualError::InconsistentEvidence);
    }
    let mut predictor = Predictor::new(scm, targets)?;
    let d = scm.graph().diagnosis();
    predictor.fixed_d = evidence
        .counterfactual
        .iter()
        .find(|o| o.variable == d)
        .map(|o| o.value);
    for (e_star, w) in counterfactual.values() {
        predictor.add(e_star, w / total);
    }
    Ok(predictor.finish(None))
}
