//! Recovery of factual error terms from observed data and a known graph.
//!
//! Every non-root variable is regressed on its parents and its residual is
//! taken as the error estimate; roots are their own errors. The top-down
//! extractor uses (ridge) least squares, the bottom-up one a nonparametric
//! [`Smoother`]. Data matrices hold one column per error coordinate, i.e.
//! the non-diagnosis variables in ascending vertex order.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::CausalGraph;
use crate::linalg::solve_spd;
use crate::registry::{Registry, RegistryError};
use crate::scm::{Scm, ScmError};

/// Smallest sample accepted by nonparametric fits.
pub const MIN_NONPARAMETRIC_N: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("singular least-squares fit for variable {variable}")]
    SingularFit { variable: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig {
    #[serde(default = "default_smoother")]
    pub kind: String,
    /// Neighbour count; `None` picks `max(10, ceil(n^0.6 / 2))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

fn default_smoother() -> String {
    "knn".into()
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            kind: default_smoother(),
            k: None,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default = "yes")]
    pub fit_intercept: bool,
    #[serde(default)]
    pub smoother: SmootherConfig,
}

fn default_mode() -> String {
    "topdown-linear".into()
}

fn yes() -> bool {
    true
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            ridge: 0.0,
            fit_intercept: true,
            smoother: SmootherConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDiagnostics {
    pub variable: String,
    pub parents: Vec<String>,
    pub method: String,
    pub residual_variance: f64,
    pub r_squared: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedErrors {
    pub e_hat: Array2<f64>,
    pub diagnostics: Vec<VariableDiagnostics>,
}

/// Fitted regression `g(pa)` of one variable on its parents.
pub trait ResidualFit: Send + Sync {
    fn predict(&self, parents: &[f64]) -> f64;
}

/// A fitted extraction, reusable on rows outside the training data.
pub struct FittedExtraction {
    graph: CausalGraph,
    fits: Vec<Option<Box<dyn ResidualFit>>>,
    training: ExtractedErrors,
}

impl FittedExtraction {
    pub fn training(&self) -> &ExtractedErrors {
        &self.training
    }

    pub fn into_training(self) -> ExtractedErrors {
        self.training
    }

    /// Error estimates for new rows.
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ExtractionError> {
        check_matrix(x, self.graph.p())?;
        let mut out = x.to_owned();
        for (c, fit) in self.fits.iter().enumerate() {
            let Some(fit) = fit else { continue };
            let parents = self.graph.coord_parents(c);
            let col: Vec<f64> = (0..x.nrows())
                .into_par_iter()
                .map(|r| {
                    let pa: Vec<f64> = parents.iter().map(|&u| x[[r, u]]).collect();
                    x[[r, c]] - fit.predict(&pa)
                })
                .collect();
            out.column_mut(c).assign(&ndarray::Array1::from(col));
        }
        Ok(out)
    }
}

/// Strategy turning `(x, graph)` into fitted residual regressions.
pub trait ErrorExtractor: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, x: ArrayView2<f64>, graph: &CausalGraph) -> Result<FittedExtraction, ExtractionError>;

    fn extract(&self, x: ArrayView2<f64>, graph: &CausalGraph) -> Result<ExtractedErrors, ExtractionError> {
        Ok(self.fit(x, graph)?.into_training())
    }
}

/// Nonparametric regression used by the bottom-up extractor.
pub trait Smoother: Send + Sync {
    fn name(&self) -> &'static str;
    /// `inputs` is row-major `n x d`.
    fn fit(&self, inputs: Vec<f64>, d: usize, target: Vec<f64>) -> Result<SmootherFit, ExtractionError>;
}

pub struct SmootherFit {
    pub fit: Box<dyn ResidualFit>,
    pub k: Option<usize>,
    pub bandwidth: Option<f64>,
}

fn check_matrix(x: ArrayView2<f64>, p: usize) -> Result<(), ExtractionError> {
    if x.ncols() != p {
        return Err(ExtractionError::Precondition(format!(
            "data has {} columns, graph has {p} error coordinates",
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ExtractionError::Precondition("data contains non-finite values".into()));
    }
    Ok(())
}

fn parent_inputs(x: ArrayView2<f64>, parents: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.nrows() * parents.len());
    for row in x.axis_iter(Axis(0)) {
        out.extend(parents.iter().map(|&u| row[u]));
    }
    out
}

fn residual_stats(target: &[f64], residual: &[f64]) -> (f64, f64) {
    let n = target.len() as f64;
    let mean_t = target.iter().sum::<f64>() / n;
    let tss: f64 = target.iter().map(|t| (t - mean_t).powi(2)).sum();
    let mean_r = residual.iter().sum::<f64>() / n;
    let rss: f64 = residual.iter().map(|r| (r - mean_r).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    (rss / n, r2)
}

/// Shared driver: roots copied, every other coordinate fitted by `fit_one`.
fn fit_all<F>(
    x: ArrayView2<f64>,
    graph: &CausalGraph,
    method: &str,
    fit_one: F,
) -> Result<FittedExtraction, ExtractionError>
where
    F: Fn(usize, Vec<f64>, usize, Vec<f64>) -> Result<(SmootherFit, Option<(f64, Vec<f64>)>), ExtractionError>
        + Sync,
{
    check_matrix(x, graph.p())?;
    let p = graph.p();
    let labels = graph.coord_labels();
    let results = (0..p)
        .into_par_iter()
        .map(|c| {
            let parents = graph.coord_parents(c);
            let target: Vec<f64> = x.column(c).to_vec();
            if parents.is_empty() {
                let diag = VariableDiagnostics {
                    variable: labels[c].clone(),
                    parents: vec![],
                    method: "root".into(),
                    residual_variance: residual_stats(&target, &target).0,
                    r_squared: 0.0,
                    intercept: None,
                    coefficients: None,
                    k: None,
                    bandwidth: None,
                };
                return Ok((None, target, diag));
            }
            let inputs = parent_inputs(x, &parents);
            let (fitted, linear) = fit_one(c, inputs.clone(), parents.len(), target.clone())?;
            let d = parents.len();
            let residual: Vec<f64> = (0..x.nrows())
                .into_par_iter()
                .map(|r| target[r] - fitted.fit.predict(&inputs[r * d..(r + 1) * d]))
                .collect();
            let (residual_variance, r_squared) = residual_stats(&target, &residual);
            let diag = VariableDiagnostics {
                variable: labels[c].clone(),
                parents: parents.iter().map(|&u| labels[u].clone()).collect(),
                method: method.into(),
                residual_variance,
                r_squared,
                intercept: linear.as_ref().map(|l| l.0),
                coefficients: linear.map(|l| l.1),
                k: fitted.k,
                bandwidth: fitted.bandwidth,
            };
            Ok((Some(fitted.fit), residual, diag))
        })
        .collect::<Result<Vec<_>, ExtractionError>>()?;

    let mut e_hat = Array2::zeros((x.nrows(), p));
    let mut fits = Vec::with_capacity(p);
    let mut diagnostics = Vec::with_capacity(p);
    for (c, (fit, col, diag)) in results.into_iter().enumerate() {
        e_hat.column_mut(c).assign(&ndarray::Array1::from(col));
        fits.push(fit);
        diagnostics.push(diag);
    }
    Ok(FittedExtraction {
        graph: graph.clone(),
        fits,
        training: ExtractedErrors { e_hat, diagnostics },
    })
}

struct LinearFit {
    intercept: f64,
    coefficients: Vec<f64>,
}

impl ResidualFit for LinearFit {
    fn predict(&self, parents: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(parents).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Least squares of each variable on its parents, optionally ridge-stabilized.
#[derive(Debug, Clone, PartialEq)]
pub struct TopDownLinear {
    pub ridge: f64,
    pub fit_intercept: bool,
}

impl TopDownLinear {
    pub fn new(ridge: f64, fit_intercept: bool) -> Result<Self, ExtractionError> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(ExtractionError::Config(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        Ok(Self { ridge, fit_intercept })
    }

    fn solve(&self, variable: &str, inputs: &[f64], d: usize, target: &[f64]) -> Result<LinearFit, ExtractionError> {
        let n = target.len();
        let (mx, my) = if self.fit_intercept {
            let mut mx = vec![0.0; d];
            for r in 0..n {
                for j in 0..d {
                    mx[j] += inputs[r * d + j];
                }
            }
            mx.iter_mut().for_each(|m| *m /= n as f64);
            (mx, target.iter().sum::<f64>() / n as f64)
        } else {
            (vec![0.0; d], 0.0)
        };
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for r in 0..n {
            let row = &inputs[r * d..(r + 1) * d];
            let y = target[r] - my;
            for i in 0..d {
                let xi = row[i] - mx[i];
                rhs[i] += xi * y;
                for j in 0..=i {
                    gram[(i, j)] += xi * (row[j] - mx[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                gram[(j, i)] = gram[(i, j)];
            }
            gram[(i, i)] += self.ridge;
        }
        let beta = solve_spd(gram, &rhs).ok_or_else(|| ExtractionError::SingularFit {
            variable: variable.to_string(),
        })?;
        let coefficients: Vec<f64> = beta.iter().copied().collect();
        let intercept = my - coefficients.iter().zip(&mx).map(|(b, m)| b * m).sum::<f64>();
        Ok(LinearFit { intercept, coefficients })
    }
}

impl ErrorExtractor for TopDownLinear {
    fn name(&self) -> &'static str {
        "topdown-linear"
    }

    fn fit(&self, x: ArrayView2<f64>, graph: &CausalGraph) -> Result<FittedExtraction, ExtractionError> {
        let labels = graph.coord_labels();
        for c in 0..graph.p() {
            let k = graph.coord_parents(c).len();
            if k > 0 && x.nrows() < k + 2 {
                return Err(ExtractionError::Precondition(format!(
                    "variable {} has {k} parents and needs at least {} rows, got {}",
                    labels[c],
                    k + 2,
                    x.nrows()
                )));
            }
        }
        fit_all(x, graph, self.name(), |c, inputs, d, target| {
            let fit = self.solve(&labels[c], &inputs, d, &target)?;
            let linear = (fit.intercept, fit.coefficients.clone());
            Ok((
                SmootherFit {
                    fit: Box::new(fit),
                    k: None,
                    bandwidth: None,
                },
                Some(linear),
            ))
        })
    }
}

/// Residuals against a nonparametric regression on the parents.
pub struct BottomUpAdditive {
    smoother: Box<dyn Smoother>,
}

impl BottomUpAdditive {
    pub fn new(smoother: Box<dyn Smoother>) -> Self {
        Self { smoother }
    }
}

impl ErrorExtractor for BottomUpAdditive {
    fn name(&self) -> &'static str {
        "bottomup-additive"
    }

    fn fit(&self, x: ArrayView2<f64>, graph: &CausalGraph) -> Result<FittedExtraction, ExtractionError> {
        let has_fits = (0..graph.p()).any(|c| !graph.coord_parents(c).is_empty());
        if has_fits && x.nrows() < MIN_NONPARAMETRIC_N {
            return Err(ExtractionError::Precondition(format!(
                "nonparametric fits need at least {MIN_NONPARAMETRIC_N} rows, got {}",
                x.nrows()
            )));
        }
        let method = format!("{}:{}", self.name(), self.smoother.name());
        fit_all(x, graph, &method, |_, inputs, d, target| {
            Ok((self.smoother.fit(inputs, d, target)?, None))
        })
    }
}

/// Default neighbour count `max(10, ceil(n^0.6 / 2))`.
pub fn default_k(n: usize) -> usize {
    ((n as f64).powf(0.6) / 2.0).ceil().max(10.0) as usize
}

/// k-nearest-neighbour mean, Euclidean distance, ties broken by row index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnSmoother {
    pub k: Option<usize>,
}

impl KnnSmoother {
    pub fn new(k: Option<usize>) -> Result<Self, ExtractionError> {
        if let Some(k) = k {
            if k < 2 {
                return Err(ExtractionError::Config(format!("k must be at least 2, got {k}")));
            }
        }
        Ok(Self { k })
    }
}

struct KnnFit {
    inputs: Vec<f64>,
    d: usize,
    target: Vec<f64>,
    k: usize,
}

impl ResidualFit for KnnFit {
    fn predict(&self, q: &[f64]) -> f64 {
        let d = self.d;
        let mut dist: Vec<(f64, usize)> = self
            .inputs
            .chunks_exact(d)
            .enumerate()
            .map(|(r, row)| (row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), r))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
        }
        let nearest = &mut dist[..self.k];
        nearest.sort_unstable_by(cmp);
        nearest.iter().map(|&(_, r)| self.target[r]).sum::<f64>() / self.k as f64
    }
}

impl Smoother for KnnSmoother {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn fit(&self, inputs: Vec<f64>, d: usize, target: Vec<f64>) -> Result<SmootherFit, ExtractionError> {
        let n = target.len();
        let k = self.k.unwrap_or_else(|| default_k(n));
        if k > n {
            return Err(ExtractionError::Config(format!("k = {k} exceeds the sample size {n}")));
        }
        Ok(SmootherFit {
            fit: Box::new(KnnFit { inputs, d, target, k }),
            k: Some(k),
            bandwidth: None,
        })
    }
}

/// Gaussian-kernel local-linear regression; falls back to the kernel
/// weighted mean where the local design is singular.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearSmoother {
    pub bandwidth: f64,
}

impl LocalLinearSmoother {
    pub fn new(bandwidth: f64) -> Result<Self, ExtractionError> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(ExtractionError::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth })
    }
}

struct LocalLinearFit {
    inputs: Vec<f64>,
    d: usize,
    target: Vec<f64>,
    bandwidth: f64,
    mean: f64,
}

impl ResidualFit for LocalLinearFit {
    fn predict(&self, q: &[f64]) -> f64 {
        let d = self.d;
        let m = d + 1;
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        let mut xtwx = DMatrix::<f64>::zeros(m, m);
        let mut xtwy = DVector::<f64>::zeros(m);
        let (mut sw, mut swy) = (0.0, 0.0);
        let mut z = vec![0.0; m];
        for (row, &y) in self.inputs.chunks_exact(d).zip(&self.target) {
            let d2: f64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = (scale * d2).exp();
            if w == 0.0 {
                continue;
            }
            sw += w;
            swy += w * y;
            z[0] = 1.0;
            for j in 0..d {
                z[j + 1] = row[j] - q[j];
            }
            for i in 0..m {
                xtwy[i] += w * z[i] * y;
                for j in 0..=i {
                    xtwx[(i, j)] += w * z[i] * z[j];
                }
            }
        }
        if sw <= 0.0 {
            return self.mean;
        }
        for i in 0..m {
            for j in 0..i {
                xtwx[(j, i)] = xtwx[(i, j)];
            }
        }
        match solve_spd(xtwx, &xtwy) {
            Some(beta) if beta[0].is_finite() => beta[0],
            _ => swy / sw,
        }
    }
}

impl Smoother for LocalLinearSmoother {
    fn name(&self) -> &'static str {
        "local-linear"
    }

    fn fit(&self, inputs: Vec<f64>, d: usize, target: Vec<f64>) -> Result<SmootherFit, ExtractionError> {
        let mean = target.iter().sum::<f64>() / target.len() as f64;
        Ok(SmootherFit {
            fit: Box::new(LocalLinearFit {
                inputs,
                d,
                target,
                bandwidth: self.bandwidth,
                mean,
            }),
            k: None,
            bandwidth: Some(self.bandwidth),
        })
    }
}

fn config_err(e: ExtractionError) -> RegistryError {
    RegistryError::Config {
        kind: "extraction",
        message: e.to_string(),
    }
}

/// Built-in smoothers: `knn`, `local-linear`.
pub fn smoothers() -> Registry<dyn Smoother, SmootherConfig> {
    let mut reg: Registry<dyn Smoother, SmootherConfig> = Registry::new("smoother");
    reg.register("knn", |c: &SmootherConfig| {
        Ok(Box::new(KnnSmoother::new(c.k).map_err(config_err)?) as Box<dyn Smoother>)
    });
    reg.register("local-linear", |c: &SmootherConfig| {
        let h = c.bandwidth.ok_or_else(|| RegistryError::Config {
            kind: "smoother",
            message: "local-linear needs a bandwidth".into(),
        })?;
        Ok(Box::new(LocalLinearSmoother::new(h).map_err(config_err)?) as Box<dyn Smoother>)
    });
    reg
}

/// Built-in extractors: `topdown-linear`, `bottomup-additive`.
pub fn extractors() -> Registry<dyn ErrorExtractor, ExtractionConfig> {
    let mut reg: Registry<dyn ErrorExtractor, ExtractionConfig> = Registry::new("extractor");
    reg.register("topdown-linear", |c: &ExtractionConfig| {
        Ok(Box::new(TopDownLinear::new(c.ridge, c.fit_intercept).map_err(config_err)?) as Box<dyn ErrorExtractor>)
    });
    reg.register("bottomup-additive", |c: &ExtractionConfig| {
        let smoother = smoothers().build(&c.smoother.kind, &c.smoother)?;
        Ok(Box::new(BottomUpAdditive::new(smoother)) as Box<dyn ErrorExtractor>)
    });
    reg
}

pub fn build_extractor(cfg: &ExtractionConfig) -> Result<Box<dyn ErrorExtractor>, ExtractionError> {
    Ok(extractors().build(&cfg.mode, cfg)?)
}

/// Exact errors from a known invertible model.
pub fn extract_oracle(scm: &Scm, x: ArrayView2<f64>) -> Result<Array2<f64>, ExtractionError> {
    check_matrix(x, scm.p())?;
    let rows = (0..x.nrows())
        .into_par_iter()
        .map(|r| scm.invert(&x.row(r).to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Array2::zeros(x.raw_dim());
    for (r, e) in rows.into_iter().enumerate() {
        out.row_mut(r).assign(&ndarray::Array1::from(e));
    }
    Ok(out)
}
