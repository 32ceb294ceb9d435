//! Synthetic scenarios with injected root causes and detection scoring.
//!
//! A scenario is a random (or fixed four-variable) model, a training sample
//! and a set of patients whose error vector is drawn from the marginals
//! except for one injected coordinate. [`run_detection`] attributes every
//! patient twice, once through the estimated pipeline (extraction, logistic
//! fit, background marginalization) and once with the true errors and the
//! true label mechanism, and scores where the injected coordinate ranks.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    attribute_with, estimators, model_fingerprint, EstimatorConfig, Transform, TransformKind,
    EXACT_THRESHOLD,
};
use crate::diagnosis::{fit_logistic, DiagnosisModel, LogisticConfig, Marginalizer, Sampling};
use crate::extraction::{build_extractor, ExtractionConfig};
use crate::graph::{random_dag_edges, CausalGraph};
use crate::registry::Registry;
use crate::scm::{row_rng, Dataset, ErrorDistribution, Mechanism, Primitive, Scm};

/// Graph draws attempted before giving up on a target policy.
pub const MAX_RETRIES: usize = 1000;

const PILOT_ROWS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> BenchError {
    move |e| BenchError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Random,
    /// `X1 -> X3 <- X2`, `X3 -> X4 -> D` with fixed weights.
    Funnel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetPolicy {
    /// A fresh uniformly chosen ancestor of `D` per patient.
    RandomAncestor,
    Fixed { coordinate: usize },
    /// A coordinate that is not an ancestor of `D`.
    NonAncestor,
}

// serde cannot deny unknown fields next to a flattened member; the
// tagged policy enum still rejects them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    #[serde(flatten)]
    pub target: TargetPolicy,
    /// Injected value in error standard deviations.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScaling {
    /// Every error coordinate that reaches `D` moves its log-odds by
    /// `strength` per error standard deviation (first order at the error
    /// means). `D` takes every eligible variable as a parent.
    EqualEffect,
    /// Each parent of `D` moves the log-odds by `strength` per standard
    /// deviation of that parent.
    ParentSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    /// Log-odds of `D = 1` at the parents' means.
    pub intercept: f64,
    pub strength: f64,
    #[serde(default = "default_scaling")]
    pub scaling: LabelScaling,
}

fn default_scaling() -> LabelScaling {
    LabelScaling::EqualEffect
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_structure")]
    pub structure: Structure,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    #[serde(default = "default_label")]
    pub label: LabelConfig,
    #[serde(default = "default_injection")]
    pub injection: InjectionConfig,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_patients")]
    pub n_patients: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_family() -> String {
    "linear-laplace".into()
}
fn default_structure() -> Structure {
    Structure::Random
}
fn default_p() -> usize {
    5
}
fn default_edge_prob() -> f64 {
    0.5
}
fn default_label() -> LabelConfig {
    LabelConfig {
        intercept: -1.0,
        strength: 1.0,
        scaling: default_scaling(),
    }
}
fn default_injection() -> InjectionConfig {
    InjectionConfig {
        target: TargetPolicy::RandomAncestor,
        magnitude: 4.0,
    }
}
fn default_n_train() -> usize {
    20_000
}
fn default_n_patients() -> usize {
    200
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            family: default_family(),
            structure: default_structure(),
            p: default_p(),
            edge_prob: default_edge_prob(),
            label: default_label(),
            injection: default_injection(),
            n_train: default_n_train(),
            n_patients: default_n_patients(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if !(self.injection.magnitude > 0.0 && self.injection.magnitude.is_finite()) {
            return bad(format!("magnitude must be positive, got {}", self.injection.magnitude));
        }
        if self.p < 2 {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if self.structure == Structure::Funnel && self.p != 4 {
            return bad(format!("the funnel structure has p = 4, got {}", self.p));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return bad(format!("edge probability {} outside [0, 1]", self.edge_prob));
        }
        if self.n_train < 2 || self.n_patients == 0 {
            return bad("need n_train >= 2 and n_patients >= 1".into());
        }
        if !(self.label.intercept.is_finite() && self.label.strength.is_finite()) {
            return bad("label coefficients must be finite".into());
        }
        if let TargetPolicy::Fixed { coordinate } = self.injection.target {
            if coordinate >= self.p {
                return bad(format!("target coordinate {coordinate} out of range (p = {})", self.p));
            }
        }
        Ok(())
    }
}

/// Mechanism family of a scenario.
pub trait ScenarioFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn error_distribution(&self) -> ErrorDistribution;
    /// Mechanism of a non-root variable with `weights` per parent.
    fn mechanism(&self, weights: Vec<f64>) -> Mechanism;
    /// Error value of an injected coordinate.
    fn injected_value(&self, dist: &ErrorDistribution, magnitude: f64) -> f64 {
        dist.mean() + magnitude * dist.sd()
    }
}

/// `X = sum w pa + E`, unit-variance Laplace errors.
pub struct LinearLaplace;

impl ScenarioFamily for LinearLaplace {
    fn name(&self) -> &'static str {
        "linear-laplace"
    }
    fn error_distribution(&self) -> ErrorDistribution {
        ErrorDistribution::laplace_with_sd(0.0, 1.0)
    }
    fn mechanism(&self, weights: Vec<f64>) -> Mechanism {
        Mechanism::Linear { weights }
    }
}

/// `X = sum 2 w tanh(pa / 2) + E`, unit-variance Laplace errors.
pub struct AdditiveTanh;

impl ScenarioFamily for AdditiveTanh {
    fn name(&self) -> &'static str {
        "additive-tanh"
    }
    fn error_distribution(&self) -> ErrorDistribution {
        ErrorDistribution::laplace_with_sd(0.0, 1.0)
    }
    fn mechanism(&self, weights: Vec<f64>) -> Mechanism {
        Mechanism::Additive {
            terms: weights
                .into_iter()
                .map(|w| Primitive::Tanh {
                    scale: 0.5,
                    gain: 2.0 * w,
                })
                .collect(),
        }
    }
}

/// Linear mechanisms over fair binary errors; injection sets the error to 1.
pub struct DiscreteBinary;

impl ScenarioFamily for DiscreteBinary {
    fn name(&self) -> &'static str {
        "discrete-binary"
    }
    fn error_distribution(&self) -> ErrorDistribution {
        ErrorDistribution::bernoulli(0.5)
    }
    fn mechanism(&self, weights: Vec<f64>) -> Mechanism {
        Mechanism::Linear { weights }
    }
    fn injected_value(&self, _: &ErrorDistribution, _: f64) -> f64 {
        1.0
    }
}

/// Built-in families: `linear-laplace`, `additive-tanh`, `discrete-binary`.
pub fn families() -> Registry<dyn ScenarioFamily, ScenarioConfig> {
    let mut reg: Registry<dyn ScenarioFamily, ScenarioConfig> = Registry::new("family");
    reg.register("linear-laplace", |_: &ScenarioConfig| Ok(Box::new(LinearLaplace) as Box<dyn ScenarioFamily>));
    reg.register("additive-tanh", |_: &ScenarioConfig| Ok(Box::new(AdditiveTanh) as Box<dyn ScenarioFamily>));
    reg.register("discrete-binary", |_: &ScenarioConfig| Ok(Box::new(DiscreteBinary) as Box<dyn ScenarioFamily>));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub e: Vec<f64>,
    pub x: Vec<f64>,
    /// Injected coordinate.
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub scm: Scm,
    pub train: Dataset,
    pub patients: Vec<Patient>,
    pub candidates: Vec<usize>,
}

/// Independent sub-seed for a named stage.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    row_rng(seed, stream).next_u64()
}

const STREAM_GRAPH: u64 = 1 << 40;
const STREAM_PILOT: u64 = (1 << 40) + 1;
const STREAM_TRAIN: u64 = (1 << 40) + 2;
const STREAM_PATIENTS: u64 = (1 << 40) + 3;
const STREAM_BACKGROUND: u64 = (1 << 40) + 4;

/// X-graph edges plus the parents of `D` (vertex `p`).
fn draw_structure<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Option<(Vec<(usize, usize)>, Vec<f64>)> {
    let p = cfg.p;
    match cfg.structure {
        Structure::Funnel => Some((vec![(0, 2), (1, 2), (2, 3), (3, 4)], vec![1.0, 0.2, 1.0])),
        Structure::Random => {
            let mut edges = random_dag_edges(p, cfg.edge_prob, rng);
            edges.sort_unstable();
            let mut has_child = vec![false; p];
            for &(u, _) in &edges {
                has_child[u] = true;
            }
            let sinks: Vec<usize> = (0..p).filter(|&v| !has_child[v]).collect();
            let excluded = match cfg.injection.target {
                TargetPolicy::NonAncestor => Some(*sinks.choose(rng)?),
                _ => None,
            };
            let mut d_parents: BTreeSet<usize> = sinks.iter().copied().filter(|&v| Some(v) != excluded).collect();
            for v in 0..p {
                let eligible = Some(v) != excluded;
                let keep = match cfg.label.scaling {
                    LabelScaling::EqualEffect => true,
                    LabelScaling::ParentSd => rng.random::<f64>() < cfg.edge_prob,
                };
                if eligible && keep {
                    d_parents.insert(v);
                }
            }
            if d_parents.is_empty() {
                return None;
            }
            let weights: Vec<f64> = edges.iter().map(|_| rng.random_range(0.5..1.5)).collect();
            edges.extend(d_parents.into_iter().map(|v| (v, p)));
            Some((edges, weights))
        }
    }
}

fn build_scm(cfg: &ScenarioConfig, family: &dyn ScenarioFamily, edges: Vec<(usize, usize)>, weights: &[f64]) -> Result<Scm, BenchError> {
    let p = cfg.p;
    let graph = CausalGraph::new(p + 1, edges.clone(), p, None).map_err(stage("scenario"))?;
    let mut mechanisms = Vec::with_capacity(p + 1);
    for v in 0..p {
        let pa = graph.parents(v);
        if pa.is_empty() {
            mechanisms.push(Mechanism::Root);
        } else {
            let w = pa
                .iter()
                .map(|&u| {
                    let k = edges.iter().position(|&e| e == (u, v)).expect("edge exists");
                    weights[k]
                })
                .collect();
            mechanisms.push(family.mechanism(w));
        }
    }
    let k = graph.parents(p).len();
    mechanisms.push(Mechanism::LogisticLabel {
        intercept: 0.0,
        weights: vec![0.0; k],
    });
    let errors = vec![family.error_distribution(); p];
    let draft = Scm::new(graph.clone(), mechanisms.clone(), errors.clone()).map_err(stage("scenario"))?;

    let pilot = draft
        .sample(PILOT_ROWS, sub_seed(cfg.seed, STREAM_PILOT))
        .map_err(stage("scenario"))?;
    let d_parents = graph.parents(p).to_vec();
    // the fixed structure keeps its single label parent
    let scaling = match cfg.structure {
        Structure::Funnel => LabelScaling::ParentSd,
        Structure::Random => cfg.label.scaling,
    };
    let label_weights = match scaling {
        LabelScaling::ParentSd => d_parents
            .iter()
            .map(|&u| {
                let sd = pilot.x.column(u).std(0.0);
                if sd > 0.0 { cfg.label.strength / sd } else { cfg.label.strength }
            })
            .collect(),
        LabelScaling::EqualEffect => equal_effect_weights(&draft, &d_parents, cfg.label.strength)?,
    };
    let centre: f64 = d_parents
        .iter()
        .zip(&label_weights)
        .map(|(&u, w)| w * pilot.x.column(u).mean().unwrap_or(0.0))
        .sum();
    mechanisms[p] = Mechanism::LogisticLabel {
        intercept: cfg.label.intercept - centre,
        weights: label_weights,
    };
    Scm::new(graph, mechanisms, errors).map_err(stage("scenario"))
}

/// Label weights `b` over `parents` solving `sum_j b_j dX_j/de_i = strength / sd_i`
/// for every coordinate `i` that reaches a parent, with the Jacobian taken by
/// central differences at the error means.
fn equal_effect_weights(scm: &Scm, parents: &[usize], strength: f64) -> Result<Vec<f64>, BenchError> {
    let p = scm.p();
    let graph = scm.graph();
    let reach: Vec<usize> = (0..p).filter(|&c| graph.coord_is_ancestor_of_diagnosis(c)).collect();
    if reach.len() != parents.len() {
        return Err(BenchError::Config(
            "equal-effect scaling needs every ancestor of D to be a parent of D".into(),
        ));
    }
    let base: Vec<f64> = scm.errors().iter().map(|d| d.mean()).collect();
    let h = 1e-6;
    let k = parents.len();
    let mut jac = nalgebra::DMatrix::<f64>::zeros(k, k);
    for (col, &i) in reach.iter().enumerate() {
        let mut up = base.clone();
        let mut down = base.clone();
        up[i] += h;
        down[i] -= h;
        let xu = scm.push_forward(&up).expect("arity");
        let xd = scm.push_forward(&down).expect("arity");
        for (row, &j) in parents.iter().enumerate() {
            jac[(row, col)] = (xu[j] - xd[j]) / (2.0 * h);
        }
    }
    let target = nalgebra::DVector::from_iterator(k, reach.iter().map(|&i| strength / scm.errors()[i].sd()));
    let b = jac
        .transpose()
        .lu()
        .solve(&target)
        .ok_or_else(|| BenchError::Config("singular effect matrix".into()))?;
    Ok(b.iter().copied().collect())
}

/// Realizes a scenario; deterministic in `cfg.seed`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, BenchError> {
    cfg.validate()?;
    let family = families()
        .build(&cfg.family, cfg)
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let mut rng = row_rng(sub_seed(cfg.seed, STREAM_GRAPH), 0);
    let mut realized = None;
    for _ in 0..MAX_RETRIES {
        let Some((edges, weights)) = draw_structure(cfg, &mut rng) else {
            continue;
        };
        let graph = CausalGraph::new(cfg.p + 1, edges.clone(), cfg.p, None).map_err(stage("scenario"))?;
        let ancestors: Vec<usize> = (0..cfg.p).filter(|&c| graph.coord_is_ancestor_of_diagnosis(c)).collect();
        let candidates: Vec<usize> = match cfg.injection.target {
            TargetPolicy::RandomAncestor => ancestors,
            TargetPolicy::Fixed { coordinate } => {
                if ancestors.contains(&coordinate) {
                    vec![coordinate]
                } else {
                    vec![]
                }
            }
            TargetPolicy::NonAncestor => (0..cfg.p).filter(|c| !ancestors.contains(c)).collect(),
        };
        if !candidates.is_empty() {
            realized = Some((edges, weights, candidates));
            break;
        }
        if cfg.structure == Structure::Funnel {
            break;
        }
    }
    let (edges, weights, candidates) = realized.ok_or_else(|| {
        BenchError::Config(format!(
            "no graph satisfying the target policy {:?} within {MAX_RETRIES} draws",
            cfg.injection.target
        ))
    })?;
    let scm = build_scm(cfg, family.as_ref(), edges, &weights)?;
    let train = scm
        .sample(cfg.n_train, sub_seed(cfg.seed, STREAM_TRAIN))
        .map_err(stage("scenario"))?;

    let patient_seed = sub_seed(cfg.seed, STREAM_PATIENTS);
    let patients = (0..cfg.n_patients)
        .map(|k| {
            let mut rng = row_rng(patient_seed, k as u64);
            let target = *candidates.choose(&mut rng).expect("non-empty");
            let mut e: Vec<f64> = scm.errors().iter().map(|d| d.sample(&mut rng)).collect();
            e[target] = family.injected_value(&scm.errors()[target], cfg.injection.magnitude);
            let x = scm.push_forward(&e).expect("arity");
            Patient { e, x, target }
        })
        .collect();
    Ok(Scenario {
        config: cfg.clone(),
        scm,
        train,
        patients,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub logistic: LogisticConfig,
    #[serde(default = "default_transform")]
    pub transform: TransformKind,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_transform() -> TransformKind {
    TransformKind::Logit
}
fn default_top_k() -> usize {
    2
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            extraction: ExtractionConfig::default(),
            logistic: LogisticConfig::default(),
            transform: default_transform(),
            estimator: EstimatorConfig::default(),
            top_k: default_top_k(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub top1: f64,
    pub top1_stderr: f64,
    pub topk: f64,
    pub mrr: f64,
    pub mean_rank: f64,
    /// Mean score of the injected coordinate.
    pub mean_target_score: f64,
}

impl DetectionMetrics {
    fn from_ranks(ranks: &[usize], target_scores: &[f64], k: usize) -> Self {
        let n = ranks.len() as f64;
        let top1 = ranks.iter().filter(|&&r| r == 1).count() as f64 / n;
        Self {
            top1,
            top1_stderr: (top1 * (1.0 - top1) / n).sqrt(),
            topk: ranks.iter().filter(|&&r| r <= k).count() as f64 / n,
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            mean_rank: ranks.iter().sum::<usize>() as f64 / n,
            mean_target_score: target_scores.iter().sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyGap {
    /// Mean over patients of `max_i |s_hat_i - s_i|`.
    pub mean_max_abs: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScores {
    pub patient: usize,
    pub target: usize,
    pub rank: usize,
    pub rank_oracle: usize,
    pub s: Vec<f64>,
    pub s_oracle: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub family: String,
    pub seed: u64,
    pub p: usize,
    pub n_train: usize,
    pub n_patients: usize,
    pub magnitude: f64,
    pub top_k: usize,
    pub transform: Transform,
    pub pipeline: DetectionMetrics,
    pub oracle: DetectionMetrics,
    /// Per-coordinate RMSE of the training error estimates.
    pub rmse: Vec<f64>,
    pub shapley_gap: ShapleyGap,
    #[serde(skip)]
    pub patients: Vec<PatientScores>,
}

/// Per-coordinate root mean squared difference between two matrices.
pub fn rmse_columns(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    (a - b)
        .map(|d| d * d)
        .mean_axis(Axis(0))
        .expect("non-empty")
        .mapv(f64::sqrt)
        .to_vec()
}

/// Runs both pipelines on every patient of `scenario`.
pub fn run_detection(scenario: &Scenario, pipeline: &PipelineConfig) -> Result<DetectionReport, BenchError> {
    let cfg = &scenario.config;
    let p = cfg.p;
    if pipeline.top_k == 0 {
        return Err(BenchError::Config("top_k must be at least 1".into()));
    }
    let transform = Transform::new(pipeline.transform);
    let estimator = estimators()
        .build(&pipeline.estimator.kind, &pipeline.estimator)
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let labels = scenario.scm.graph().coord_labels();

    // estimated pipeline
    let extractor = build_extractor(&pipeline.extraction).map_err(stage("extract"))?;
    let fitted = extractor
        .fit(scenario.train.x.view(), scenario.scm.graph())
        .map_err(stage("extract"))?;
    let e_hat_train = &fitted.training().e_hat;
    let rmse = rmse_columns(e_hat_train, &scenario.train.e);
    let model = fit_logistic(
        e_hat_train.view(),
        &scenario.train.d,
        &pipeline.logistic,
        Some(labels.clone()),
        sub_seed(cfg.seed, STREAM_BACKGROUND),
    )
    .map_err(stage("fit"))?;
    let patient_x = Array2::from_shape_fn((scenario.patients.len(), p), |(r, c)| scenario.patients[r].x[c]);
    let patient_e_hat = fitted.transform(patient_x.view()).map_err(stage("extract"))?;

    // oracle pipeline
    let oracle_sampling = if scenario.scm.is_discrete() && p <= EXACT_THRESHOLD {
        Sampling::Exact
    } else {
        Sampling::BackgroundRows
    };
    let oracle = DiagnosisModel::exact_synthetic(scenario.scm.clone())
        .with_background(
            scenario.train.e.view(),
            pipeline.logistic.background_size,
            sub_seed(cfg.seed, STREAM_BACKGROUND),
        )
        .map_err(stage("oracle"))?;

    let m_hat = Marginalizer::new(&model, Sampling::BackgroundRows).map_err(stage("attribute"))?;
    let m_oracle = Marginalizer::new(&oracle, oracle_sampling).map_err(stage("oracle"))?;
    let fp_hat = model_fingerprint(&model);
    let fp_oracle = model_fingerprint(&oracle);

    let scores = scenario
        .patients
        .par_iter()
        .enumerate()
        .map(|(k, patient)| {
            let e_hat = patient_e_hat.row(k).to_vec();
            let a = attribute_with(&m_hat, &e_hat, transform, estimator.as_ref(), fp_hat.clone())
                .map_err(stage("attribute"))?;
            let o = attribute_with(&m_oracle, &patient.e, transform, estimator.as_ref(), fp_oracle.clone())
                .map_err(stage("oracle"))?;
            Ok(PatientScores {
                patient: k,
                target: patient.target,
                rank: a.rank_of(patient.target),
                rank_oracle: o.rank_of(patient.target),
                s: a.s,
                s_oracle: o.s,
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let ranks: Vec<usize> = scores.iter().map(|s| s.rank).collect();
    let ranks_oracle: Vec<usize> = scores.iter().map(|s| s.rank_oracle).collect();
    let target_s: Vec<f64> = scores.iter().map(|s| s.s[s.target]).collect();
    let target_s_oracle: Vec<f64> = scores.iter().map(|s| s.s_oracle[s.target]).collect();
    let gaps: Vec<f64> = scores
        .iter()
        .map(|s| s.s.iter().zip(&s.s_oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    Ok(DetectionReport {
        family: cfg.family.clone(),
        seed: cfg.seed,
        p,
        n_train: cfg.n_train,
        n_patients: cfg.n_patients,
        magnitude: cfg.injection.magnitude,
        top_k: pipeline.top_k,
        transform,
        pipeline: DetectionMetrics::from_ranks(&ranks, &target_s, pipeline.top_k),
        oracle: DetectionMetrics::from_ranks(&ranks_oracle, &target_s_oracle, pipeline.top_k),
        rmse,
        shapley_gap: ShapleyGap {
            mean_max_abs: gaps.iter().sum::<f64>() / gaps.len() as f64,
            max_abs: gaps.iter().cloned().fold(0.0, f64::max),
        },
        patients: scores,
    })
}

/// Runs `repetitions` scenarios with seeds `cfg.seed + r` in parallel;
/// reports come back in repetition order.
pub fn run_repetitions(
    cfg: &ScenarioConfig,
    pipeline: &PipelineConfig,
    repetitions: usize,
) -> Result<Vec<DetectionReport>, BenchError> {
    (0..repetitions as u64)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(r);
            run_detection(&generate_scenario(&c)?, pipeline)
        })
        .collect()
}
