//! One function per subcommand.

use std::path::Path;

use rayon::prelude::*;
use rootcause_core::attribution::{
    attribute_with, estimators, model_fingerprint, EstimatorInfo, RankedCause, Transform, TransformKind,
};
use rootcause_core::bench::{run_repetitions, DetectionReport, PipelineConfig, ScenarioConfig};
use rootcause_core::counterfactual::verify_all;
use rootcause_core::diagnosis::{fit_logistic, DiagnosisModel, Marginalizer, ModelDocument, ModelKind, Sampling};
use rootcause_core::extraction::{build_extractor, ExtractionConfig, VariableDiagnostics};
use rootcause_core::scm::{Scm, ScmDocument};
use serde::Serialize;

use crate::config::{FitKind, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, read_json, with_provenance, OutputDir, Provenance, Table};

fn load_document(path: &Path) -> Result<ScmDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    ScmDocument::from_json(&text).map_err(|e| CliError::input(path, e))
}

fn load_scm(path: &Path) -> Result<Scm> {
    load_document(path)?.to_scm().map_err(|e| CliError::input(path, e))
}

fn load_model(path: &Path) -> Result<DiagnosisModel> {
    let mut value = read_json(path)?;
    if let serde_json::Value::Object(map) = &mut value {
        map.remove("provenance");
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| CliError::input(path, e))?;
    doc.to_model().map_err(|e| CliError::input(path, e))
}

fn matrix_rows(m: &ndarray::Array2<f64>, extra: Option<&[u8]>) -> Vec<Vec<String>> {
    m.outer_iter()
        .enumerate()
        .map(|(r, row)| {
            let mut out: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            if let Some(labels) = extra {
                out.push(labels[r].to_string());
            }
            out
        })
        .collect()
}

struct Run {
    provenance: Provenance,
    out: OutputDir,
}

impl Run {
    fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        let provenance = Provenance::new(command, cfg.hash(), cfg.seed);
        log::info!("{command}: config {} seed {}", provenance.config_hash, cfg.seed);
        Ok(Self {
            provenance,
            out: OutputDir::create(cfg.output_dir())?,
        })
    }

    fn finish(self) -> Result<()> {
        self.out.finish(&self.provenance)
    }
}

/// Samples `simulate.rows` rows: `data.csv` holds the variables and the
/// diagnosis column, `errors.csv` the true errors and the same labels.
pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let path = cfg.require("graph", &cfg.paths.graph)?;
    let scm = load_scm(&path)?;
    let mut run = Run::new("simulate", cfg)?;
    let data = scm.sample(cfg.simulate.rows, cfg.seed).map_err(|e| CliError::pipeline("simulate", e))?;
    let g = scm.graph();
    let mut header = g.coord_labels();
    header.push(g.label(g.diagnosis()).to_string());
    run.out.write_csv("data.csv", &header, &matrix_rows(&data.x, Some(&data.d)))?;
    run.out.write_csv("errors.csv", &header, &matrix_rows(&data.e, Some(&data.d)))?;
    run.finish()
}

#[derive(Serialize)]
struct ExtractionReport<'a> {
    extractor: &'a str,
    config: &'a ExtractionConfig,
    rows: usize,
    variables: &'a [VariableDiagnostics],
}

/// Fits the extraction on `paths.data` and writes `e_hat.csv`; rows of
/// `paths.patients` go through the same fit into `patients_e_hat.csv`.
pub fn extract(cfg: &RunConfig) -> Result<()> {
    let graph_path = cfg.require("graph", &cfg.paths.graph)?;
    let data_path = cfg.require("data", &cfg.paths.data)?;
    let patients_path = match &cfg.paths.patients {
        Some(_) => Some(cfg.require("patients", &cfg.paths.patients)?),
        None => None,
    };
    let graph = load_document(&graph_path)?.graph().map_err(|e| CliError::input(&graph_path, e))?;
    let table = Table::read(&data_path)?;
    let labels = graph.coord_labels();
    let x = table.select(&labels)?;
    let diagnosis = graph.label(graph.diagnosis()).to_string();
    let d = match table.column_index(&diagnosis) {
        Some(_) => Some(table.labels(&diagnosis)?),
        None => None,
    };
    let extractor = build_extractor(&cfg.extraction).map_err(|e| CliError::Config(format!("extraction: {e}")))?;
    let mut run = Run::new("extract", cfg)?;
    let fitted = extractor.fit(x.view(), &graph).map_err(|e| CliError::pipeline("extract", e))?;
    let mut header = labels.clone();
    if d.is_some() {
        header.push(diagnosis.clone());
    }
    run.out.write_csv("e_hat.csv", &header, &matrix_rows(&fitted.training().e_hat, d.as_deref()))?;
    if let Some(path) = patients_path {
        let patients = Table::read(&path)?;
        let xp = patients.select(&labels)?;
        let e = fitted.transform(xp.view()).map_err(|e| CliError::pipeline("extract", e))?;
        run.out.write_csv("patients_e_hat.csv", &labels, &matrix_rows(&e, None))?;
    }
    let report = ExtractionReport {
        extractor: extractor.name(),
        config: &cfg.extraction,
        rows: x.nrows(),
        variables: &fitted.training().diagnostics,
    };
    run.out.write_json("extraction.json", &with_provenance(&report, &run.provenance))?;
    run.finish()
}

/// Fits the diagnosis model on `paths.errors` and writes `model.json`.
pub fn fit(cfg: &RunConfig) -> Result<()> {
    let errors_path = cfg.require("errors", &cfg.paths.errors)?;
    let doc = match &cfg.paths.graph {
        Some(_) => Some(load_document(&cfg.require("graph", &cfg.paths.graph)?)?),
        None => None,
    };
    let label_column = cfg
        .fit
        .label_column
        .clone()
        .or_else(|| doc.as_ref().map(|d| d.diagnosis.clone()))
        .unwrap_or_else(|| "D".into());
    let table = Table::read(&errors_path)?;
    let labels: Vec<String> = match &doc {
        Some(d) => {
            let path = cfg.paths.graph.as_deref().unwrap_or(Path::new(""));
            d.graph().map_err(|e| CliError::input(path, e))?.coord_labels()
        }
        None => table.header.iter().filter(|h| **h != label_column).cloned().collect(),
    };
    let e_hat = table.select(&labels)?;
    let run = Run::new("fit", cfg)?;
    let model = match cfg.fit.kind {
        FitKind::Logistic => {
            let d = table.labels(&label_column)?;
            fit_logistic(e_hat.view(), &d, &cfg.logistic, Some(labels), cfg.seed)
                .map_err(|e| CliError::pipeline("fit", e))?
        }
        FitKind::ExactSynthetic => {
            let path = cfg.require("graph", &cfg.paths.graph)?;
            let scm = doc
                .as_ref()
                .expect("graph loaded above")
                .to_scm()
                .map_err(|e| CliError::input(&path, e))?;
            DiagnosisModel::exact_synthetic(scm)
                .with_background(e_hat.view(), cfg.logistic.background_size, cfg.seed)
                .map_err(|e| CliError::pipeline("fit", e))?
        }
    };
    log::info!("fitted {} model, fingerprint {}", model.kind_name(), model_fingerprint(&model));
    let doc = ModelDocument::from_model(&model);
    run.out.write_json("model.json", &with_provenance(&doc, &run.provenance))?;
    run.finish()
}

#[derive(Serialize)]
struct AttributionLine<'a> {
    patient_id: usize,
    s: Vec<f64>,
    phi_total: f64,
    factual: f64,
    baseline: f64,
    transform: TransformKind,
    estimator: EstimatorInfo,
    sampling: Sampling,
    stderr: Option<Vec<f64>>,
    ranked_causes: Vec<RankedCause>,
    model_fingerprint: &'a str,
    config_hash: &'a str,
    seed: u64,
}

fn default_sampling(model: &DiagnosisModel) -> Sampling {
    match model.kind() {
        ModelKind::ExactSynthetic(scm) if scm.is_discrete() => Sampling::Exact,
        _ => Sampling::BackgroundRows,
    }
}

/// Scores every row of `paths.errors` against `paths.model` and writes
/// one JSON line per row to `attributions.jsonl`. `patient_id` is the
/// 0-based data row.
pub fn attribute(cfg: &RunConfig) -> Result<()> {
    let model_path = cfg.require("model", &cfg.paths.model)?;
    let errors_path = cfg.require("errors", &cfg.paths.errors)?;
    let model = load_model(&model_path)?;
    let table = Table::read(&errors_path)?;
    let e = table.select(model.labels())?;
    let est = cfg.estimator_config()?;
    let estimator = estimators()
        .build(&est.kind, &est)
        .map_err(|e| CliError::Config(format!("estimator: {e}")))?;
    let sampling = cfg.attribution.sampling.unwrap_or_else(|| default_sampling(&model));
    let marginalizer = Marginalizer::new(&model, sampling).map_err(|e| CliError::Config(format!("sampling: {e}")))?;
    let transform = Transform::new(cfg.transform);
    let fingerprint = model_fingerprint(&model);
    let run = Run::new("attribute", cfg)?;
    let rows: Vec<Vec<f64>> = e.outer_iter().map(|r| r.to_vec()).collect();
    let results = rows
        .par_iter()
        .map(|row| attribute_with(&marginalizer, row, transform, estimator.as_ref(), fingerprint.clone()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::pipeline("attribute", e))?;
    let lines: Vec<AttributionLine> = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| AttributionLine {
            patient_id: i,
            ranked_causes: r.ranked_causes(model.labels(), cfg.attribution.tau),
            s: r.s,
            phi_total: r.phi_total,
            factual: r.factual,
            baseline: r.baseline,
            transform: r.transform.kind,
            estimator: r.estimator,
            sampling: r.sampling,
            stderr: r.stderr,
            model_fingerprint: &fingerprint,
            config_hash: &run.provenance.config_hash,
            seed: cfg.seed,
        })
        .collect();
    log::info!("attributed {} patients", lines.len());
    run.out.write_lines("attributions.jsonl", &lines)?;
    run.finish()
}

/// Checks both counterfactual identities on the discrete SCM of
/// `paths.graph` and writes `verification.json`.
pub fn verify(cfg: &RunConfig) -> Result<()> {
    let path = cfg.require("graph", &cfg.paths.graph)?;
    let scm = load_scm(&path)?;
    if !scm.is_discrete() {
        return Err(CliError::input(&path, "verification needs discrete error distributions"));
    }
    if !(cfg.verify.tolerance > 0.0) {
        return Err(CliError::Config(format!("tolerance must be positive, got {}", cfg.verify.tolerance)));
    }
    let run = Run::new("verify", cfg)?;
    let summary = verify_all(&scm, cfg.verify.patients.as_deref(), cfg.verify.tolerance)
        .map_err(|e| CliError::pipeline("verify", e))?;
    if summary.pass {
        log::info!("verification passed, max abs diff {:e}", summary.max_abs_diff);
    } else {
        log::warn!("verification failed, max abs diff {:e}", summary.max_abs_diff);
    }
    run.out.write_json("verification.json", &with_provenance(&summary, &run.provenance))?;
    run.finish()
}

#[derive(Serialize)]
struct BenchReport<'a> {
    scenario: &'a ScenarioConfig,
    pipeline: &'a PipelineConfig,
    repetitions: usize,
    reports: &'a [DetectionReport],
}

/// Runs `bench.repetitions` scenarios (seeds `seed`, `seed + 1`, ...) and
/// writes `report.json`, plus `patients.csv` when asked.
pub fn bench(cfg: &RunConfig) -> Result<()> {
    cfg.scenario.validate().map_err(|e| CliError::Config(format!("scenario: {e}")))?;
    if cfg.bench.repetitions == 0 {
        return Err(CliError::Config("bench.repetitions must be at least 1".into()));
    }
    let pipeline = PipelineConfig {
        extraction: cfg.extraction.clone(),
        logistic: cfg.logistic.clone(),
        transform: cfg.transform,
        estimator: cfg.estimator_config()?,
        top_k: cfg.bench.top_k,
    };
    let mut run = Run::new("bench", cfg)?;
    let reports =
        run_repetitions(&cfg.scenario, &pipeline, cfg.bench.repetitions).map_err(|e| CliError::pipeline("bench", e))?;
    for r in &reports {
        log::info!(
            "seed {}: top1 {:.4} (oracle {:.4})",
            r.seed,
            r.pipeline.top1,
            r.oracle.top1
        );
    }
    let report = BenchReport {
        scenario: &cfg.scenario,
        pipeline: &pipeline,
        repetitions: reports.len(),
        reports: &reports,
    };
    run.out.write_json("report.json", &with_provenance(&report, &run.provenance))?;
    if cfg.bench.patients_csv {
        let p = cfg.scenario.p;
        let mut header: Vec<String> = ["seed", "patient", "target", "rank", "rank_oracle"].map(String::from).to_vec();
        header.extend((1..=p).map(|c| format!("s{c}")));
        header.extend((1..=p).map(|c| format!("s_oracle{c}")));
        let rows: Vec<Vec<String>> = reports
            .iter()
            .flat_map(|r| {
                r.patients.iter().map(move |ps| {
                    let mut row = vec![
                        r.seed.to_string(),
                        ps.patient.to_string(),
                        ps.target.to_string(),
                        ps.rank.to_string(),
                        ps.rank_oracle.to_string(),
                    ];
                    row.extend(ps.s.iter().chain(&ps.s_oracle).map(|&v| fmt_f64(v)));
                    row
                })
            })
            .collect();
        run.out.write_csv("patients.csv", &header, &rows)?;
    }
    run.finish()
}
