//! Models of `P(D = 1 | E)` and expectations over marginalized error terms.
//!
//! A [`DiagnosisModel`] is either a logistic regression fitted on
//! (estimated) error rows, or the exact label mechanism of a known model.
//! Both answer in log-odds; probabilities and transformed scores are derived
//! from them. [`Marginalizer`] computes `E_{E_V} f(logodds(e_W, E_V))`.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counterfactual::enumerate_product;
use crate::linalg::solve_spd;
use crate::scm::{row_rng, sigmoid, Scm, ScmDocument, ScmError};

/// Default cap on stored background rows.
pub const DEFAULT_BACKGROUND: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosisError {
    #[error("expected {expected} error coordinates, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("labels contain a single class ({0}); both classes are needed")]
    DegenerateLabels(u8),
    #[error("no convergence after {iterations} iterations (gradient max-norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("background sample is empty")]
    EmptyBackground,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Logistic { intercept: f64, weights: Vec<f64> },
    /// The label mechanism of a known model evaluated at `X(e)`.
    ExactSynthetic(Scm),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n: usize,
    pub positives: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    pub mean_log_likelihood: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisModel {
    kind: ModelKind,
    labels: Vec<String>,
    background: Array2<f64>,
    logit_offset: f64,
    diagnostics: Option<FitDiagnostics>,
}

impl DiagnosisModel {
    pub fn logistic(intercept: f64, weights: Vec<f64>, labels: Option<Vec<String>>) -> Self {
        let p = weights.len();
        Self {
            kind: ModelKind::Logistic { intercept, weights },
            labels: labels.unwrap_or_else(|| default_labels(p)),
            background: Array2::zeros((0, p)),
            logit_offset: 0.0,
            diagnostics: None,
        }
    }

    /// Model whose predictions are the true label probabilities of `scm`.
    pub fn exact_synthetic(scm: Scm) -> Self {
        let p = scm.p();
        let labels = scm.graph().coord_labels();
        Self {
            kind: ModelKind::ExactSynthetic(scm),
            labels,
            background: Array2::zeros((0, p)),
            logit_offset: 0.0,
            diagnostics: None,
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::Logistic { .. } => "logistic",
            ModelKind::ExactSynthetic(_) => "exact_synthetic",
        }
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn background(&self) -> ArrayView2<'_, f64> {
        self.background.view()
    }

    pub fn logit_offset(&self) -> f64 {
        self.logit_offset
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// Replaces the background with a fixed-seed subsample of at most
    /// `size` rows whose columns are then shuffled independently, so the
    /// rows are draws from the product of the empirical marginals.
    pub fn with_background(mut self, rows: ArrayView2<f64>, size: usize, seed: u64) -> Result<Self, DiagnosisError> {
        if rows.ncols() != self.p() {
            return Err(DiagnosisError::Arity {
                expected: self.p(),
                got: rows.ncols(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(DiagnosisError::Precondition("background contains non-finite values".into()));
        }
        self.background = independent_background(rows, size, seed);
        Ok(self)
    }

    /// Uses `rows` verbatim as the background.
    pub fn with_raw_background(mut self, rows: Array2<f64>) -> Result<Self, DiagnosisError> {
        if rows.ncols() != self.p() {
            return Err(DiagnosisError::Arity {
                expected: self.p(),
                got: rows.ncols(),
            });
        }
        self.background = rows;
        Ok(self)
    }

    /// Same model with every log-odds shifted by `c` on top of any existing
    /// offset.
    pub fn with_logit_offset(&self, c: f64) -> Self {
        Self {
            logit_offset: self.logit_offset + c,
            ..self.clone()
        }
    }

    fn check(&self, e: &[f64]) -> Result<(), DiagnosisError> {
        if e.len() != self.p() {
            return Err(DiagnosisError::Arity {
                expected: self.p(),
                got: e.len(),
            });
        }
        Ok(())
    }

    /// Unchecked log-odds; `e` must have length `p`.
    pub(crate) fn log_odds_unchecked(&self, e: &[f64]) -> f64 {
        let z = match &self.kind {
            ModelKind::Logistic { intercept, weights } => {
                intercept + weights.iter().zip(e).map(|(w, x)| w * x).sum::<f64>()
            }
            ModelKind::ExactSynthetic(scm) => {
                let x = scm.push_forward(e).expect("arity checked");
                scm.label_log_odds(&x)
            }
        };
        z + self.logit_offset
    }

    pub fn log_odds(&self, e: &[f64]) -> Result<f64, DiagnosisError> {
        self.check(e)?;
        Ok(self.log_odds_unchecked(e))
    }

    /// `P(D = 1 | e)`, always in `[0, 1]`.
    pub fn predict_proba(&self, e: &[f64]) -> Result<f64, DiagnosisError> {
        Ok(sigmoid(self.log_odds(e)?))
    }

    /// Coordinates the model ignores: zero logistic weights, or error terms
    /// that are not ancestors of the diagnosis.
    pub fn absent_coordinates(&self) -> Vec<bool> {
        match &self.kind {
            ModelKind::Logistic { weights, .. } => weights.iter().map(|&w| w == 0.0).collect(),
            ModelKind::ExactSynthetic(scm) => (0..scm.p())
                .map(|c| !scm.graph().coord_is_ancestor_of_diagnosis(c))
                .collect(),
        }
    }
}

fn default_labels(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("X{i}")).collect()
}

fn independent_background(rows: ArrayView2<f64>, size: usize, seed: u64) -> Array2<f64> {
    let n = rows.nrows();
    let m = n.min(size);
    let mut rng = row_rng(seed, u64::MAX);
    let mut idx = sample_indices(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    let mut out = Array2::zeros((m, rows.ncols()));
    for c in 0..rows.ncols() {
        let mut col: Vec<f64> = idx.iter().map(|&r| rows[[r, c]]).collect();
        col.shuffle(&mut row_rng(seed, c as u64));
        out.column_mut(c).assign(&ndarray::Array1::from(col));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticConfig {
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_background")]
    pub background_size: usize,
}

fn default_l2() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-8
}
fn default_background() -> usize {
    DEFAULT_BACKGROUND
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: default_l2(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            background_size: default_background(),
        }
    }
}

/// Mean negative log-likelihood plus `l2/2 |w|^2` (intercept unpenalized).
fn objective(x: ArrayView2<f64>, d: &[u8], beta: &[f64], l2: f64) -> f64 {
    let n = x.nrows();
    let mut nll = 0.0;
    for r in 0..n {
        let z = beta[0] + (0..x.ncols()).map(|j| beta[j + 1] * x[[r, j]]).sum::<f64>();
        // log(1 + e^z) - d z, computed stably
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        nll += softplus - f64::from(d[r]) * z;
    }
    nll / n as f64 + 0.5 * l2 * beta[1..].iter().map(|w| w * w).sum::<f64>()
}

/// L2-penalized logistic regression by damped Newton steps.
///
/// The objective is the mean negative log-likelihood plus `l2/2 |w|^2`;
/// iteration stops once the gradient max-norm drops below `tol`. The
/// returned model's background is a subsample of the training rows.
pub fn fit_logistic(
    e_hat: ArrayView2<f64>,
    d: &[u8],
    cfg: &LogisticConfig,
    labels: Option<Vec<String>>,
    seed: u64,
) -> Result<DiagnosisModel, DiagnosisError> {
    let (n, p) = e_hat.dim();
    if d.len() != n {
        return Err(DiagnosisError::Precondition(format!("{n} rows but {} labels", d.len())));
    }
    if n == 0 {
        return Err(DiagnosisError::Precondition("no rows".into()));
    }
    if d.iter().any(|&v| v > 1) {
        return Err(DiagnosisError::Precondition("labels must be 0 or 1".into()));
    }
    if e_hat.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosisError::Precondition("non-finite error estimates".into()));
    }
    if !(cfg.l2 >= 0.0 && cfg.tol > 0.0) {
        return Err(DiagnosisError::Precondition("need l2 >= 0 and tol > 0".into()));
    }
    let positives = d.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n {
        return Err(DiagnosisError::DegenerateLabels(d[0]));
    }
    if let Some(labels) = &labels {
        if labels.len() != p {
            return Err(DiagnosisError::Arity {
                expected: p,
                got: labels.len(),
            });
        }
    }

    let m = p + 1;
    let base = (positives as f64 / (n - positives) as f64).ln();
    let mut beta = vec![0.0; m];
    beta[0] = base;
    let mut current = objective(e_hat, d, &beta, cfg.l2);
    let mut grad_norm;
    let mut iterations = 0;
    loop {
        let mut grad = nalgebra::DVector::<f64>::zeros(m);
        let mut hess = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut z = vec![0.0; m];
        for r in 0..n {
            z[0] = 1.0;
            for j in 0..p {
                z[j + 1] = e_hat[[r, j]];
            }
            let eta: f64 = beta.iter().zip(&z).map(|(b, x)| b * x).sum();
            let mu = sigmoid(eta);
            let resid = mu - f64::from(d[r]);
            let w = mu * (1.0 - mu);
            for i in 0..m {
                grad[i] += resid * z[i];
                for j in 0..=i {
                    hess[(i, j)] += w * z[i] * z[j];
                }
            }
        }
        let nf = n as f64;
        for i in 0..m {
            grad[i] /= nf;
            if i > 0 {
                grad[i] += cfg.l2 * beta[i];
            }
            for j in 0..=i {
                hess[(i, j)] /= nf;
                hess[(j, i)] = hess[(i, j)];
            }
            if i > 0 {
                hess[(i, i)] += cfg.l2;
            }
        }
        grad_norm = grad.amax();
        if grad_norm < cfg.tol {
            break;
        }
        if iterations == cfg.max_iter {
            break;
        }
        iterations += 1;
        let step = solve_spd(hess.clone(), &grad)
            .or_else(|| {
                let mut jitter = hess;
                for i in 0..m {
                    jitter[(i, i)] += 1e-8;
                }
                solve_spd(jitter, &grad)
            })
            .ok_or(DiagnosisError::NonConvergence { iterations, grad_norm })?;
        let mut t = 1.0;
        let mut accepted = false;
        // near the optimum the objective only moves by rounding noise
        let slack = 1e-13 * current.abs().max(1.0);
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b - t * s).collect();
            let value = objective(e_hat, d, &trial, cfg.l2);
            if value <= current + slack {
                beta = trial;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(grad_norm < cfg.tol) {
        return Err(DiagnosisError::NonConvergence { iterations, grad_norm });
    }
    let diagnostics = FitDiagnostics {
        n,
        positives,
        iterations,
        grad_norm,
        mean_log_likelihood: -objective(e_hat, d, &beta, 0.0),
        l2: cfg.l2,
    };
    let mut model = DiagnosisModel::logistic(beta[0], beta[1..].to_vec(), labels)
        .with_background(e_hat, cfg.background_size, seed)?;
    model.diagnostics = Some(diagnostics);
    Ok(model)
}

/// How marginalized coordinates are integrated out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sampling {
    /// Enumeration over discrete error marginals (exact-synthetic only).
    Exact,
    /// Average over the model's background rows.
    BackgroundRows,
    /// `draws` independent draws per coordinate from the known marginals
    /// (exact-synthetic) or from the background columns (logistic).
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Monte Carlo standard error; zero for exact and background averages.
    pub stderr: f64,
}

/// Evaluates `E_{E_V} f(logodds(e_W, E_V))` for a fixed model and mode.
#[derive(Debug, Clone)]
pub struct Marginalizer<'a> {
    model: &'a DiagnosisModel,
    sampling: Sampling,
    atoms: Option<Vec<Vec<(f64, f64)>>>,
}

impl<'a> Marginalizer<'a> {
    pub fn new(model: &'a DiagnosisModel, sampling: Sampling) -> Result<Self, DiagnosisError> {
        let atoms = match (sampling, model.kind()) {
            (Sampling::Exact, ModelKind::ExactSynthetic(scm)) => Some(
                scm.errors()
                    .iter()
                    .map(|d| d.atoms())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| {
                        DiagnosisError::Unsupported(
                            "exact marginalization needs discrete error distributions".into(),
                        )
                    })?,
            ),
            (Sampling::Exact, ModelKind::Logistic { .. }) => {
                return Err(DiagnosisError::Unsupported(
                    "exact marginalization needs an exact-synthetic model".into(),
                ))
            }
            (Sampling::BackgroundRows, _) if model.background().nrows() == 0 => {
                return Err(DiagnosisError::EmptyBackground)
            }
            (Sampling::MonteCarlo { draws, .. }, kind) => {
                if draws < 2 {
                    return Err(DiagnosisError::Precondition("Monte Carlo needs at least 2 draws".into()));
                }
                if matches!(kind, ModelKind::Logistic { .. }) && model.background().nrows() == 0 {
                    return Err(DiagnosisError::EmptyBackground);
                }
                None
            }
            _ => None,
        };
        Ok(Self { model, sampling, atoms })
    }

    pub fn model(&self) -> &DiagnosisModel {
        self.model
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    /// `retained[c]` marks coordinates of `W`; the rest are marginalized.
    pub fn expectation<F>(&self, e: &[f64], retained: &[bool], f: F) -> Result<Estimate, DiagnosisError>
    where
        F: Fn(f64) -> f64,
    {
        self.model.check(e)?;
        if retained.len() != e.len() {
            return Err(DiagnosisError::Arity {
                expected: e.len(),
                got: retained.len(),
            });
        }
        Ok(self.expectation_unchecked(e, retained, &f))
    }

    pub(crate) fn expectation_unchecked(&self, e: &[f64], retained: &[bool], f: &dyn Fn(f64) -> f64) -> Estimate {
        let model = self.model;
        let marginal: Vec<usize> = (0..e.len()).filter(|&c| !retained[c]).collect();
        if marginal.is_empty() {
            return Estimate {
                value: f(model.log_odds_unchecked(e)),
                stderr: 0.0,
            };
        }
        let mut world = e.to_vec();
        match self.sampling {
            Sampling::Exact => {
                let atoms = self.atoms.as_ref().expect("built with atoms");
                let rows: Vec<Vec<(f64, f64)>> = marginal.iter().map(|&c| atoms[c].clone()).collect();
                let states = enumerate_product(&rows).expect("p is bounded by the caller");
                let mut total = 0.0;
                for (values, q) in states {
                    if q == 0.0 {
                        continue;
                    }
                    for (&c, v) in marginal.iter().zip(values) {
                        world[c] = v;
                    }
                    total += q * f(model.log_odds_unchecked(&world));
                }
                Estimate {
                    value: total,
                    stderr: 0.0,
                }
            }
            Sampling::BackgroundRows => {
                let bg = model.background();
                let mut total = 0.0;
                for r in 0..bg.nrows() {
                    for &c in &marginal {
                        world[c] = bg[[r, c]];
                    }
                    total += f(model.log_odds_unchecked(&world));
                }
                Estimate {
                    value: total / bg.nrows() as f64,
                    stderr: 0.0,
                }
            }
            Sampling::MonteCarlo { draws, seed } => {
                let bg = model.background();
                let (mut sum, mut sum_sq) = (0.0, 0.0);
                for j in 0..draws {
                    let mut rng = row_rng(seed, j as u64);
                    for &c in &marginal {
                        // one draw per coordinate in coordinate order, so
                        // retained sets share random numbers
                        world[c] = match model.kind() {
                            ModelKind::ExactSynthetic(scm) => scm.errors()[c].sample(&mut rng),
                            ModelKind::Logistic { .. } => bg[[rng.random_range(0..bg.nrows()), c]],
                        };
                    }
                    let v = f(model.log_odds_unchecked(&world));
                    sum += v;
                    sum_sq += v * v;
                }
                let m = draws as f64;
                let mean = sum / m;
                let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
                Estimate {
                    value: mean,
                    stderr: (var / m).sqrt(),
                }
            }
        }
    }
}

/// `E_{E_V} P(D = 1 | e_W, E_V)` with `V` the complement of `retained`.
pub fn conditional_expectation(
    model: &DiagnosisModel,
    e: &[f64],
    retained: &[bool],
    sampling: Sampling,
) -> Result<Estimate, DiagnosisError> {
    Marginalizer::new(model, sampling)?.expectation(e, retained, sigmoid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundDocument {
    pub rows: Vec<Vec<f64>>,
}

/// JSON form of a [`DiagnosisModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub kind: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scm: Option<ScmDocument>,
    #[serde(default)]
    pub logit_offset: f64,
    pub background: BackgroundDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
}

impl ModelDocument {
    pub fn from_model(model: &DiagnosisModel) -> Self {
        let (intercept, weights, scm) = match &model.kind {
            ModelKind::Logistic { intercept, weights } => (Some(*intercept), Some(weights.clone()), None),
            ModelKind::ExactSynthetic(scm) => (None, None, Some(ScmDocument::from_scm(scm))),
        };
        Self {
            kind: model.kind_name().into(),
            labels: model.labels.clone(),
            intercept,
            weights,
            scm,
            logit_offset: model.logit_offset,
            background: BackgroundDocument {
                rows: model.background.outer_iter().map(|r| r.to_vec()).collect(),
            },
            diagnostics: model.diagnostics.clone(),
        }
    }

    pub fn to_model(&self) -> Result<DiagnosisModel, DiagnosisError> {
        let bad = |m: &str| DiagnosisError::Precondition(format!("model document: {m}"));
        let mut model = match self.kind.as_str() {
            "logistic" => {
                let (Some(intercept), Some(weights)) = (self.intercept, self.weights.clone()) else {
                    return Err(bad("logistic models need intercept and weights"));
                };
                if weights.len() != self.labels.len() {
                    return Err(bad("weights and labels differ in length"));
                }
                if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(bad("non-finite coefficients"));
                }
                DiagnosisModel::logistic(intercept, weights, Some(self.labels.clone()))
            }
            "exact_synthetic" => {
                let doc = self.scm.as_ref().ok_or_else(|| bad("exact_synthetic models need scm"))?;
                let scm = doc.to_scm()?;
                if scm.graph().coord_labels() != self.labels {
                    return Err(bad("labels do not match the model's variables"));
                }
                DiagnosisModel::exact_synthetic(scm)
            }
            other => return Err(bad(&format!("unknown kind {other:?}"))),
        };
        let p = model.p();
        if self.background.rows.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
            return Err(bad("background rows must be finite with one entry per label"));
        }
        let flat: Vec<f64> = self.background.rows.iter().flatten().copied().collect();
        model.background = Array2::from_shape_vec((self.background.rows.len(), p), flat).expect("shape checked");
        if !self.logit_offset.is_finite() {
            return Err(bad("non-finite logit offset"));
        }
        model.logit_offset = self.logit_offset;
        model.diagnostics = self.diagnostics.clone();
        Ok(model)
    }
}
