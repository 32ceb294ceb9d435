//! Runs the `rootcause` binary and checks its JSON against the shipped
//! schemas.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

pub fn rootcause(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rootcause"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs and requires exit code 0.
pub fn ok(args: &[&str]) -> Output {
    let out = rootcause(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Panics with every violation unless `instance` matches `schemas/<name>`.
pub fn assert_schema(name: &str, instance: &Value) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas");
    let mut opts = jsonschema::options();
    let mut root = None;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let schema = read_json(&path);
        let id = schema["$id"].as_str().unwrap().to_string();
        if path.file_name().unwrap() == name {
            root = Some(schema.clone());
        }
        opts = opts.with_resource(id, jsonschema::Resource::from_contents(schema).unwrap());
    }
    let validator = opts.build(&root.unwrap_or_else(|| panic!("no schema {name}"))).unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{}: {e}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// simulate, extract, fit and attribute on the demo graph into `out`.
pub fn funnel_chain(out: &Path) {
    let cfg = fixture("funnel.toml");
    let (cfg, out) = (path_str(&cfg), path_str(out));
    let data = format!("{out}/data.csv");
    let e_hat = format!("{out}/e_hat.csv");
    let model = format!("{out}/model.json");
    let patients = format!("{out}/patients_e_hat.csv");
    ok(&["simulate", "--config", cfg, "--output", out]);
    ok(&["extract", "--config", cfg, "--output", out, "--data", &data]);
    ok(&["fit", "--config", cfg, "--output", out, "--errors", &e_hat]);
    ok(&["attribute", "--config", cfg, "--output", out, "--model", &model, "--errors", &patients]);
}
