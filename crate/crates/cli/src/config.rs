//! Run configuration: one TOML file per run, overridden by flags.
//!
//! ```toml
//! seed = 7
//! transform = "logit"
//! estimator = "sampled:256"
//!
//! [paths]
//! graph = "funnel.json"
//! data = "out/data.csv"
//!
//! [extraction]
//! mode = "bottomup-additive"
//! smoother = { kind = "knn", k = 50 }
//! ```
//!
//! Relative paths in the file are taken from the file's directory; paths
//! given as flags are taken from the working directory.

use std::path::{Path, PathBuf};

use rootcause_core::attribution::{EstimatorConfig, TransformKind};
use rootcause_core::bench::ScenarioConfig;
use rootcause_core::diagnosis::{LogisticConfig, Sampling};
use rootcause_core::extraction::ExtractionConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// SCM document (graph, and mechanisms where a stage needs them).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    /// Observed variables, one column per variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Error estimates, one column per coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// New observations to push through a fitted extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patients: Option<PathBuf>,
    /// Scenario TOML for `bench`; replaces the `[scenario]` table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    #[serde(default = "default_rows")]
    pub rows: usize,
}

fn default_rows() -> usize {
    1000
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self { rows: default_rows() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Logistic,
    /// The known SCM of `paths.graph`, with the error CSV as background.
    ExactSynthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default = "default_fit_kind")]
    pub kind: FitKind,
    /// Defaults to the graph's diagnosis, or `D` without a graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
}

fn default_fit_kind() -> FitKind {
    FitKind::Logistic
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kind: default_fit_kind(),
            label_column: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionOptions {
    /// Defaults to exact enumeration for discrete exact-synthetic models
    /// and to background rows otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    /// Causes are listed when their score exceeds this.
    #[serde(default)]
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Every patient of positive probability when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patients: Option<Vec<Vec<f64>>>,
}

fn default_tolerance() -> f64 {
    1e-12
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            patients: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchOptions {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Also write per-patient scores as CSV.
    #[serde(default)]
    pub patients_csv: bool,
}

fn default_repetitions() -> usize {
    1
}
fn default_top_k() -> usize {
    2
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: default_repetitions(),
            top_k: default_top_k(),
            patients_csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker cap, 0 for one per core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_transform")]
    pub transform: TransformKind,
    /// `exact` or `sampled:N`.
    #[serde(default = "default_estimator")]
    pub estimator: String,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub simulate: SimulateOptions,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub logistic: LogisticConfig,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub attribution: AttributionOptions,
    #[serde(default)]
    pub verify: VerifyOptions,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub bench: BenchOptions,
}

fn default_transform() -> TransformKind {
    TransformKind::Logit
}
fn default_estimator() -> String {
    "exact".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config")
    }
}

/// Flag values; `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub transform: Option<TransformKind>,
    pub estimator: Option<String>,
    pub graph: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub errors: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub patients: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub rows: Option<usize>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::input(path, e.message()))
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads the optional config file and applies the flags on top.
    pub fn load(file: Option<&Path>, flags: Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let mut cfg: RunConfig = read_toml(path)?;
                let base = path.parent().unwrap_or(Path::new(""));
                let p = &mut cfg.paths;
                for slot in [&mut p.graph, &mut p.data, &mut p.errors, &mut p.model, &mut p.patients, &mut p.scenario] {
                    rebase(base, slot);
                }
                rebase(base, &mut cfg.output);
                cfg
            }
            None => RunConfig::default(),
        };
        let p = &mut cfg.paths;
        for (slot, flag) in [
            (&mut p.graph, flags.graph),
            (&mut p.data, flags.data),
            (&mut p.errors, flags.errors),
            (&mut p.model, flags.model),
            (&mut p.patients, flags.patients),
            (&mut p.scenario, flags.scenario),
            (&mut cfg.output, flags.output),
        ] {
            if flag.is_some() {
                *slot = flag;
            }
        }
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = flags.threads {
            cfg.threads = v;
        }
        if let Some(v) = flags.transform {
            cfg.transform = v;
        }
        if let Some(v) = flags.estimator {
            cfg.estimator = v;
        }
        if let Some(v) = flags.rows {
            cfg.simulate.rows = v;
        }
        if let Some(path) = cfg.paths.scenario.clone() {
            cfg.scenario = read_toml(&path)?;
        }
        // the run seed drives every stage, scenario generation included
        cfg.scenario.seed = cfg.seed;
        cfg.estimator_config()?;
        Ok(cfg)
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        let mut est: EstimatorConfig = self
            .estimator
            .parse()
            .map_err(|e: String| CliError::Config(format!("estimator: {e}")))?;
        if est.kind == "sampled" {
            est.seed = Some(self.seed);
        }
        Ok(est)
    }

    /// Hex SHA-256 of the resolved config. The output directory and the
    /// thread cap are left out since neither changes any result.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        c.threads = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// The path behind `paths.<name>`, which must be set and exist.
    pub fn require(&self, name: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let path = value
            .clone()
            .ok_or_else(|| CliError::Config(format!("no {name} path given (--{name} or paths.{name})")))?;
        if !path.exists() {
            return Err(CliError::input(&path, format!("{name} file does not exist")));
        }
        Ok(path)
    }
}
