mod support;

use std::fs;

use support::{assert_schema, funnel_chain, fixture, ok, path_str, read_json, read_lines, rootcause, stderr};

#[test]
fn verify_passes_on_the_or_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    ok(&["verify", "--config", path_str(&fixture("or_verify.toml")), "--output", path_str(&out)]);
    let report = read_json(&out.join("verification.json"));
    assert_schema("verification.schema.json", &report);
    assert_eq!(report["pass"], true);
    assert!(report["max_abs_diff"].as_f64().unwrap() < 1e-12);
    // four patients of positive probability, four subsets each
    assert_eq!(report["patients"].as_array().unwrap().len(), 4);
    assert!(report["patients"].as_array().unwrap().iter().all(|p| p["subsets"].as_array().unwrap().len() == 4));
}

#[test]
fn funnel_chain_names_x1_for_the_injected_patient() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    funnel_chain(out);

    let lines = read_lines(&out.join("attributions.jsonl"));
    assert_eq!(lines.len(), 2);
    for line in &lines {
        assert_schema("attribution.schema.json", line);
    }
    assert_eq!(lines[0]["patient_id"], 0);
    assert_eq!(lines[0]["ranked_causes"][0]["label"], "X1");
    let s: Vec<f64> = lines[0]["s"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let total: f64 = s.iter().sum();
    assert!((total - lines[0]["phi_total"].as_f64().unwrap()).abs() < 1e-10);

    assert_schema("model.schema.json", &read_json(&out.join("model.json")));
    assert_schema("extraction.schema.json", &read_json(&out.join("extraction.json")));
    let manifest = read_json(&out.join("manifest.json"));
    assert_schema("manifest.schema.json", &manifest);
    for name in ["data.csv", "errors.csv", "e_hat.csv", "patients_e_hat.csv"] {
        assert!(manifest["files"][name].is_object(), "{name} missing from manifest");
    }
    assert_eq!(manifest["files"]["data.csv"]["provenance"]["command"], "simulate");
    assert_eq!(manifest["files"]["e_hat.csv"]["provenance"]["seed"], 11);
}

#[test]
fn simulate_writes_the_requested_rows_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["simulate", "--graph", path_str(&fixture("funnel.json")), "--rows", "250", "--output", path_str(out)]);
    for name in ["data.csv", "errors.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "X1,X2,X3,X4,D");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 250);
        assert!(rows.iter().all(|r| r.ends_with(",0") || r.ends_with(",1")));
    }
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["files"]["data.csv"]["rows"], 250);
}

#[test]
fn attribute_without_a_model_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rootcause(&[
        "attribute",
        "--errors",
        path_str(&fixture("funnel_patients.csv")),
        "--output",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    let out = rootcause(&[
        "attribute",
        "--model",
        path_str(&missing),
        "--errors",
        path_str(&fixture("funnel_patients.csv")),
        "--output",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.json"));
}

#[test]
fn missing_graph_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("no_such_graph.json");
    let out = rootcause(&["simulate", "--graph", path_str(&graph), "--output", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(path_str(&graph)), "{}", stderr(&out));
}

#[test]
fn malformed_inputs_exit_with_two_and_no_panic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out_dir = d.join("out");
    let out = path_str(&out_dir);
    let write = |name: &str, text: &str| {
        let p = d.join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let graph = path_str(&fixture("funnel.json")).to_string();
    let cases: Vec<Vec<String>> = vec![
        vec!["verify".into(), "--graph".into(), path_str(&write("g.json", "{\"variables\": [")).into()],
        vec!["extract".into(), "--graph".into(), graph.clone(), "--data".into(), path_str(&write("a.csv", "X1,X2\n1,2\n")).into()],
        vec!["extract".into(), "--graph".into(), graph.clone(), "--data".into(), path_str(&write("b.csv", "X1,X2,X3,X4\n1,2,x,4\n")).into()],
        vec!["extract".into(), "--graph".into(), graph.clone(), "--data".into(), path_str(&write("c.csv", "")).into()],
        vec!["fit".into(), "--errors".into(), path_str(&write("d.csv", "A,D\n0.5,2\n")).into()],
        vec!["attribute".into(), "--model".into(), path_str(&write("m.json", "{\"kind\": \"logistic\"}")).into(), "--errors".into(), path_str(&write("e.csv", "A\n1\n")).into()],
        vec!["bench".into(), "--config".into(), path_str(&write("r.toml", "[scenario]\np = 1\n")).into()],
        vec!["bench".into(), "--config".into(), path_str(&write("s.toml", "seed = -4\n")).into()],
        vec!["simulate".into(), "--config".into(), path_str(&write("t.toml", "= nonsense")).into()],
        vec!["verify".into(), "--graph".into(), graph.clone()],
    ];
    for args in cases {
        let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
        full.extend(["--output", out]);
        let res = rootcause(&full);
        assert_eq!(res.status.code(), Some(2), "{args:?}: {}", stderr(&res));
        assert!(!stderr(&res).contains("panicked"));
    }
}

#[test]
fn pipeline_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // one class only: the logistic fit has nothing to separate
    let errors = dir.path().join("e.csv");
    fs::write(&errors, "A,D\n0.5,1\n-0.5,1\n0.25,1\n").unwrap();
    let out = rootcause(&["fit", "--errors", path_str(&errors), "--output", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn flags_override_config_values_and_change_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, sub: &str| {
        let out = dir.path().join(sub);
        let cfg = fixture("or_verify.toml");
        let mut args = vec!["verify", "--config", path_str(&cfg)];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let out_s = path_str(&out).to_string();
        args.extend(["--output", &out_s]);
        ok(&args);
        read_json(&out.join("verification.json"))["provenance"].clone()
    };
    let a = run(None, "a");
    let b = run(Some("5"), "b");
    assert_eq!(a["seed"], 0);
    assert_eq!(b["seed"], 5);
    assert_ne!(a["config_hash"], b["config_hash"]);
    // the output directory does not enter the hash
    assert_eq!(run(Some("5"), "c")["config_hash"], b["config_hash"]);
}

#[test]
fn exact_synthetic_or_model_reproduces_closed_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let errors = d.join("e.csv");
    fs::write(&errors, "X1,X2\n1,1\n0,1\n0,0\n").unwrap();
    let config = d.join("or.toml");
    fs::write(
        &config,
        format!(
            "transform = \"identity\"\n[paths]\ngraph = {:?}\n[fit]\nkind = \"exact-synthetic\"\n",
            path_str(&fixture("or_model.json"))
        ),
    )
    .unwrap();
    let out = d.join("out");
    let (cfg, out_s) = (path_str(&config), path_str(&out));
    ok(&["fit", "--config", cfg, "--errors", path_str(&errors), "--output", out_s]);
    let model = out.join("model.json");
    assert_schema("model.schema.json", &read_json(&model));
    ok(&["attribute", "--config", cfg, "--model", path_str(&model), "--errors", path_str(&errors), "--output", out_s]);
    let lines = read_lines(&out.join("attributions.jsonl"));
    assert_eq!(lines[0]["sampling"]["kind"], "exact");
    for (line, want) in lines.iter().zip([[0.125, 0.125], [-0.125, 0.375], [-0.375, -0.375]]) {
        for i in 0..2 {
            assert!((line["s"][i].as_f64().unwrap() - want[i]).abs() < 1e-12, "{line}");
        }
    }
    assert!((lines[0]["baseline"].as_f64().unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn sampled_estimator_reports_standard_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    funnel_chain(out);
    let cfg = path_str(&fixture("funnel.toml")).to_string();
    let model = out.join("model.json");
    let patients = out.join("patients_e_hat.csv");
    let sampled = out.join("sampled");
    ok(&[
        "attribute",
        "--config",
        &cfg,
        "--model",
        path_str(&model),
        "--errors",
        path_str(&patients),
        "--estimator",
        "sampled:64",
        "--output",
        path_str(&sampled),
    ]);
    let lines = read_lines(&sampled.join("attributions.jsonl"));
    for line in &lines {
        assert_schema("attribution.schema.json", line);
        assert_eq!(line["estimator"]["kind"], "sampled");
        assert_eq!(line["stderr"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn bench_writes_report_and_patient_scores() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["bench", "--config", path_str(&fixture("bench.toml")), "--output", path_str(out)]);
    let report = read_json(&out.join("report.json"));
    assert_schema("report.schema.json", &report);
    assert_eq!(report["reports"].as_array().unwrap().len(), 2);
    assert_eq!(report["reports"][1]["seed"], 1);
    let csv = fs::read_to_string(out.join("patients.csv")).unwrap();
    // header plus 50 patients for each of two repetitions
    assert_eq!(csv.lines().count(), 101);
    assert_schema("manifest.schema.json", &read_json(&out.join("manifest.json")));
}

#[test]
fn fixture_documents_match_the_graph_schema() {
    for name in ["or_model.json", "funnel.json"] {
        assert_schema("scm.schema.json", &read_json(&fixture(name)));
    }
}
