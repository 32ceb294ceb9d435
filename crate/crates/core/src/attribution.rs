//! Effect scores, marginal gains and Shapley decompositions of a patient's
//! transformed disease probability.
//!
//! For a retained set `W` the coalition value is
//! `v(W) = E_{E_V} m[P(D | e_W, E_V)]` with `V` the complement of `W`, the
//! transform `m` applied inside the expectation. Then
//! `Phi(V) = v(all) - v(W)`, `gamma_i(W) = v(W + i) - v(W)` and
//! `s_i = sum_W gamma_i(W) / (p * C(p - 1, |W|))`.

use std::fmt;
use std::str::FromStr;

use dashmap::DashMap;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnosis::{DiagnosisError, DiagnosisModel, Marginalizer, ModelDocument, Sampling};
use crate::registry::{Registry, RegistryError};
use crate::scm::{row_rng, sigmoid};

/// Largest `p` handled by exact enumeration of coalitions.
pub const EXACT_THRESHOLD: usize = 12;

/// Largest `p` handled by the sampled estimator (coalitions are bit masks).
pub const MAX_SAMPLED_P: usize = 64;

pub const DEFAULT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error(transparent)]
    Diagnosis(#[from] DiagnosisError),
    #[error("p = {p} exceeds the exact threshold {threshold}; use the sampled estimator")]
    UseSampled { p: usize, threshold: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Identity,
    Log,
    Logit,
}

/// Strictly increasing map `m` of a probability. `log` and `logit` clamp the
/// probability to `[eps, 1 - eps]` first; `identity` is left unclamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub kind: TransformKind,
    pub eps: f64,
}

impl Transform {
    pub fn new(kind: TransformKind) -> Self {
        Self { kind, eps: DEFAULT_EPS }
    }

    pub fn identity() -> Self {
        Self::new(TransformKind::Identity)
    }

    pub fn log() -> Self {
        Self::new(TransformKind::Log)
    }

    pub fn logit() -> Self {
        Self::new(TransformKind::Logit)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TransformKind::Identity => "identity",
            TransformKind::Log => "log",
            TransformKind::Logit => "logit",
        }
    }

    /// `m(p)` for a probability.
    pub fn apply(&self, p: f64) -> f64 {
        let clamped = p.clamp(self.eps, 1.0 - self.eps);
        match self.kind {
            TransformKind::Identity => p,
            TransformKind::Log => clamped.ln(),
            TransformKind::Logit => (clamped / (1.0 - clamped)).ln(),
        }
    }

    /// `m(sigmoid(z))` computed from log-odds.
    pub fn apply_log_odds(&self, z: f64) -> f64 {
        match self.kind {
            TransformKind::Identity => sigmoid(z),
            TransformKind::Log => sigmoid(z).clamp(self.eps, 1.0 - self.eps).ln(),
            TransformKind::Logit => {
                let bound = ((1.0 - self.eps) / self.eps).ln();
                z.clamp(-bound, bound)
            }
        }
    }
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Self::identity()),
            "log" => Ok(Self::log()),
            "logit" => Ok(Self::logit()),
            other => Err(format!("unknown transform {other:?} (identity, log, logit)")),
        }
    }
}

fn mask_of(set: &[usize], p: usize) -> Result<u64, AttributionError> {
    let mut mask = 0u64;
    for &c in set {
        if c >= p {
            return Err(AttributionError::Precondition(format!("coordinate {c} out of range (p = {p})")));
        }
        mask |= 1 << c;
    }
    Ok(mask)
}

fn retained_from_mask(mask: u64, p: usize) -> Vec<bool> {
    (0..p).map(|c| mask >> c & 1 == 1).collect()
}

/// Coalition values `v(W)` for one patient, model, transform and sampling.
pub struct CoalitionValue<'a> {
    marginalizer: &'a Marginalizer<'a>,
    e: &'a [f64],
    transform: Transform,
}

impl<'a> CoalitionValue<'a> {
    pub fn new(marginalizer: &'a Marginalizer<'a>, e: &'a [f64], transform: Transform) -> Result<Self, AttributionError> {
        let p = marginalizer.model().p();
        if e.len() != p {
            return Err(DiagnosisError::Arity { expected: p, got: e.len() }.into());
        }
        if p > MAX_SAMPLED_P {
            return Err(AttributionError::Precondition(format!("p = {p} exceeds {MAX_SAMPLED_P}")));
        }
        Ok(Self {
            marginalizer,
            e,
            transform,
        })
    }

    pub fn p(&self) -> usize {
        self.e.len()
    }

    /// `v(W)` for the retained set encoded by `mask`.
    pub fn value(&self, mask: u64) -> f64 {
        let t = self.transform;
        let f = move |z: f64| t.apply_log_odds(z);
        self.marginalizer
            .expectation_unchecked(self.e, &retained_from_mask(mask, self.p()), &f)
            .value
    }

    pub fn full(&self) -> u64 {
        if self.p() == 64 {
            u64::MAX
        } else {
            (1u64 << self.p()) - 1
        }
    }

    /// Every `v(W)`, indexed by mask, computed once each.
    pub fn all(&self) -> Result<Vec<f64>, AttributionError> {
        if self.p() > EXACT_THRESHOLD {
            return Err(AttributionError::UseSampled {
                p: self.p(),
                threshold: EXACT_THRESHOLD,
            });
        }
        Ok((0..=self.full()).into_par_iter().map(|m| self.value(m)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectScore {
    pub value: f64,
    pub v: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient: Option<String>,
    pub transform: Transform,
}

/// `Phi^m_{e_V}(e) = m[P(D | e)] - E_{E_V} m[P(D | e_W, E_V)]`.
pub fn effect_score(
    marginalizer: &Marginalizer,
    e: &[f64],
    v: &[usize],
    transform: Transform,
) -> Result<EffectScore, AttributionError> {
    let cv = CoalitionValue::new(marginalizer, e, transform)?;
    let mask = mask_of(v, cv.p())?;
    let full = cv.full();
    let value = if mask == 0 {
        0.0
    } else {
        cv.value(full) - cv.value(full & !mask)
    };
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(EffectScore {
        value,
        v,
        patient: None,
        transform,
    })
}

/// `gamma = v(W + i) - v(W)`.
pub fn marginal_gain(
    marginalizer: &Marginalizer,
    e: &[f64],
    w: &[usize],
    i: usize,
    transform: Transform,
) -> Result<f64, AttributionError> {
    let cv = CoalitionValue::new(marginalizer, e, transform)?;
    let mask = mask_of(w, cv.p())?;
    if i >= cv.p() {
        return Err(AttributionError::Precondition(format!("coordinate {i} out of range")));
    }
    if mask >> i & 1 == 1 {
        return Err(AttributionError::Precondition(format!("coordinate {i} is already retained")));
    }
    Ok(cv.value(mask | 1 << i) - cv.value(mask))
}

/// Shapley weight `1 / (p * C(p - 1, k))` per retained-set size `k`.
pub fn shapley_weights(p: usize) -> Vec<f64> {
    let mut binom = vec![1.0f64; p];
    for k in 1..p {
        binom[k] = binom[k - 1] * (p - k) as f64 / k as f64;
    }
    binom.iter().map(|b| 1.0 / (p as f64 * b)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorInfo {
    Exact,
    Sampled {
        permutations: usize,
        seed: u64,
        /// True when the local-accuracy residual was redistributed.
        adjusted: bool,
        residual: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyValues {
    pub s: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub info: EstimatorInfo,
}

/// Strategy estimating the Shapley vector from coalition values.
pub trait ShapleyEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, values: &CoalitionValue) -> Result<ShapleyValues, AttributionError>;
}

/// Full enumeration; each of the `2^p` coalition values is computed once.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExactShapley;

impl ShapleyEstimator for ExactShapley {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn estimate(&self, values: &CoalitionValue) -> Result<ShapleyValues, AttributionError> {
        let v = values.all()?;
        Ok(ShapleyValues {
            s: shapley_from_values(&v, values.p()),
            stderr: None,
            info: EstimatorInfo::Exact,
        })
    }
}

/// Shapley vector from a table of all coalition values indexed by mask.
pub fn shapley_from_values(v: &[f64], p: usize) -> Vec<f64> {
    let weights = shapley_weights(p);
    (0..p)
        .into_par_iter()
        .map(|i| {
            let bit = 1usize << i;
            let mut s = 0.0;
            for w in 0..v.len() {
                if w & bit == 0 {
                    s += weights[w.count_ones() as usize] * (v[w | bit] - v[w]);
                }
            }
            s
        })
        .collect()
}

/// Antithetic permutation sampling. `permutations` counts both members of
/// each (permutation, reverse) pair; pair `j` uses random stream `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledShapley {
    pub permutations: usize,
    pub seed: u64,
}

impl SampledShapley {
    pub fn new(permutations: usize, seed: u64) -> Result<Self, AttributionError> {
        if permutations < 2 || permutations % 2 != 0 {
            return Err(AttributionError::Precondition(format!(
                "permutations must be even and at least 2, got {permutations}"
            )));
        }
        Ok(Self { permutations, seed })
    }
}

impl ShapleyEstimator for SampledShapley {
    fn name(&self) -> &'static str {
        "sampled"
    }

    fn estimate(&self, values: &CoalitionValue) -> Result<ShapleyValues, AttributionError> {
        let p = values.p();
        let pairs = self.permutations / 2;
        let cache: DashMap<u64, f64> = DashMap::new();
        let value = |mask: u64| -> f64 {
            if let Some(v) = cache.get(&mask) {
                return *v;
            }
            let v = values.value(mask);
            cache.insert(mask, v);
            v
        };
        let walk = |order: &[usize], out: &mut [f64]| {
            let mut mask = 0u64;
            let mut prev = value(0);
            for &i in order {
                mask |= 1 << i;
                let next = value(mask);
                out[i] += next - prev;
                prev = next;
            }
        };
        let per_pair: Vec<Vec<f64>> = (0..pairs)
            .into_par_iter()
            .map(|j| {
                let mut order: Vec<usize> = (0..p).collect();
                order.shuffle(&mut row_rng(self.seed, j as u64));
                let mut contrib = vec![0.0; p];
                walk(&order, &mut contrib);
                order.reverse();
                walk(&order, &mut contrib);
                contrib.iter_mut().for_each(|c| *c *= 0.5);
                contrib
            })
            .collect();

        let m = pairs as f64;
        let mut s = vec![0.0; p];
        for row in &per_pair {
            for (acc, x) in s.iter_mut().zip(row) {
                *acc += x;
            }
        }
        s.iter_mut().for_each(|x| *x /= m);
        let stderr: Vec<f64> = (0..p)
            .map(|i| {
                if pairs < 2 {
                    return 0.0;
                }
                let var = per_pair.iter().map(|r| (r[i] - s[i]).powi(2)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            })
            .collect();

        let phi_total = value(values.full()) - value(0);
        let residual = s.iter().sum::<f64>() - phi_total;
        let adjusted = residual != 0.0;
        if adjusted {
            let total_se: f64 = stderr.iter().sum();
            for i in 0..p {
                let share = if total_se > 0.0 { stderr[i] / total_se } else { 1.0 / p as f64 };
                s[i] -= residual * share;
            }
        }
        Ok(ShapleyValues {
            s,
            stderr: Some(stderr),
            info: EstimatorInfo::Sampled {
                permutations: self.permutations,
                seed: self.seed,
                adjusted,
                residual,
            },
        })
    }
}

/// `exact` or `sampled` with a permutation count; parses `exact` and
/// `sampled:N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EstimatorConfig {
    pub fn exact() -> Self {
        Self {
            kind: "exact".into(),
            permutations: None,
            seed: None,
        }
    }

    pub fn sampled(permutations: usize, seed: u64) -> Self {
        Self {
            kind: "sampled".into(),
            permutations: Some(permutations),
            seed: Some(seed),
        }
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::exact()
    }
}

impl FromStr for EstimatorConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "exact" => Ok(Self::exact()),
            Some(("sampled", n)) => n
                .parse()
                .map(|n| Self {
                    kind: "sampled".into(),
                    permutations: Some(n),
                    seed: None,
                })
                .map_err(|_| format!("bad permutation count {n:?}")),
            _ => Err(format!("unknown estimator {s:?} (exact, sampled:N)")),
        }
    }
}

/// Built-in estimators: `exact`, `sampled`.
pub fn estimators() -> Registry<dyn ShapleyEstimator, EstimatorConfig> {
    let mut reg: Registry<dyn ShapleyEstimator, EstimatorConfig> = Registry::new("estimator");
    reg.register("exact", |_: &EstimatorConfig| Ok(Box::new(ExactShapley) as Box<dyn ShapleyEstimator>));
    reg.register("sampled", |c: &EstimatorConfig| {
        let n = c.permutations.ok_or_else(|| RegistryError::Config {
            kind: "estimator",
            message: "sampled needs a permutation count".into(),
        })?;
        let est = SampledShapley::new(n, c.seed.unwrap_or(0)).map_err(|e| RegistryError::Config {
            kind: "estimator",
            message: e.to_string(),
        })?;
        Ok(Box::new(est) as Box<dyn ShapleyEstimator>)
    });
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCause {
    pub index: usize,
    pub label: String,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub s: Vec<f64>,
    /// `m[P(D | e)] - E_E m[P(D | E)]`.
    pub phi_total: f64,
    pub factual: f64,
    pub baseline: f64,
    pub transform: Transform,
    pub estimator: EstimatorInfo,
    pub sampling: Sampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Vec<f64>>,
    pub model_fingerprint: String,
}

impl AttributionResult {
    /// Coordinates with `s_i > tau`, by descending score then index.
    pub fn ranked_causes(&self, labels: &[String], tau: f64) -> Vec<RankedCause> {
        let mut out: Vec<RankedCause> = self
            .s
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > tau)
            .map(|(i, &s)| RankedCause {
                index: i,
                label: labels.get(i).cloned().unwrap_or_else(|| format!("E{}", i + 1)),
                s,
            })
            .collect();
        out.sort_by(|a, b| b.s.total_cmp(&a.s).then(a.index.cmp(&b.index)));
        out
    }

    /// 1-based rank of coordinate `i` by descending score, ties by index.
    pub fn rank_of(&self, i: usize) -> usize {
        let si = self.s[i];
        1 + self
            .s
            .iter()
            .enumerate()
            .filter(|&(j, &sj)| sj > si || (sj == si && j < i))
            .count()
    }
}

/// Hex SHA-256 of the model's JSON form.
pub fn model_fingerprint(model: &DiagnosisModel) -> String {
    let json = serde_json::to_vec(&ModelDocument::from_model(model)).expect("model serializes");
    hex::encode(Sha256::digest(&json))
}

/// Shapley attribution of one patient.
pub fn attribute(
    model: &DiagnosisModel,
    e: &[f64],
    transform: Transform,
    sampling: Sampling,
    estimator: &dyn ShapleyEstimator,
) -> Result<AttributionResult, AttributionError> {
    let marginalizer = Marginalizer::new(model, sampling)?;
    attribute_with(&marginalizer, e, transform, estimator, model_fingerprint(model))
}

/// As [`attribute`] with a prepared marginalizer and fingerprint.
pub fn attribute_with(
    marginalizer: &Marginalizer,
    e: &[f64],
    transform: Transform,
    estimator: &dyn ShapleyEstimator,
    model_fingerprint: String,
) -> Result<AttributionResult, AttributionError> {
    let cv = CoalitionValue::new(marginalizer, e, transform)?;
    let values = estimator.estimate(&cv)?;
    let factual = cv.value(cv.full());
    let baseline = cv.value(0);
    Ok(AttributionResult {
        s: values.s,
        phi_total: factual - baseline,
        factual,
        baseline,
        transform,
        estimator: values.info,
        sampling: marginalizer.sampling(),
        stderr: values.stderr,
        model_fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceShiftReport {
    pub c: f64,
    pub transform: Transform,
    pub max_abs_diff_s: f64,
    /// Largest change over every marginal gain; only filled when `p` is
    /// within the exact threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_abs_diff_gamma: Option<f64>,
    pub phi_total: f64,
    pub phi_total_shifted: f64,
}

/// Recomputes the attribution after shifting every log-odds by `c`.
pub fn prevalence_shift_check(
    model: &DiagnosisModel,
    e: &[f64],
    c: f64,
    transform: Transform,
    sampling: Sampling,
    estimator: &dyn ShapleyEstimator,
) -> Result<PrevalenceShiftReport, AttributionError> {
    let shifted = model.with_logit_offset(c);
    let a = attribute(model, e, transform, sampling, estimator)?;
    let b = attribute(&shifted, e, transform, sampling, estimator)?;
    let max_abs_diff_s = a.s.iter().zip(&b.s).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let max_abs_diff_gamma = if e.len() <= EXACT_THRESHOLD {
        let ma = Marginalizer::new(model, sampling)?;
        let mb = Marginalizer::new(&shifted, sampling)?;
        let va = CoalitionValue::new(&ma, e, transform)?.all()?;
        let vb = CoalitionValue::new(&mb, e, transform)?.all()?;
        let mut worst = 0.0f64;
        for w in 0..va.len() {
            for i in 0..e.len() {
                if w >> i & 1 == 0 {
                    let ga = va[w | 1 << i] - va[w];
                    let gb = vb[w | 1 << i] - vb[w];
                    worst = worst.max((ga - gb).abs());
                }
            }
        }
        Some(worst)
    } else {
        None
    };
    Ok(PrevalenceShiftReport {
        c,
        transform,
        max_abs_diff_s,
        max_abs_diff_gamma,
        phi_total: a.phi_total,
        phi_total_shifted: b.phi_total,
    })
}
