use rootcause_core::bench::{
    generate_scenario, run_detection, run_repetitions, DetectionReport, LabelScaling, PipelineConfig, ScenarioConfig,
    Structure, TargetPolicy,
};
use rootcause_core::counterfactual::verify_all;

fn small(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_train: 3000,
        n_patients: 100,
        seed,
        ..ScenarioConfig::default()
    }
}

fn finite(r: &DetectionReport) -> bool {
    let m = |d: &rootcause_core::bench::DetectionMetrics| {
        [d.top1, d.top1_stderr, d.topk, d.mrr, d.mean_rank, d.mean_target_score]
            .iter()
            .all(|v| v.is_finite())
            && (0.0..=1.0).contains(&d.top1)
            && (0.0..=1.0).contains(&d.topk)
            && d.mean_rank >= 1.0
    };
    m(&r.pipeline)
        && m(&r.oracle)
        && r.rmse.iter().all(|v| v.is_finite())
        && r.shapley_gap.mean_max_abs.is_finite()
        && r.shapley_gap.max_abs.is_finite()
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let cfg = small(3);
    let a = run_detection(&generate_scenario(&cfg).unwrap(), &PipelineConfig::default()).unwrap();
    let b = run_detection(&generate_scenario(&cfg).unwrap(), &PipelineConfig::default()).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    assert!(finite(&a));
}

#[test]
fn discrete_binary_scenarios_pass_equivalence_checks() {
    for seed in 0..3 {
        let cfg = ScenarioConfig {
            family: "discrete-binary".into(),
            p: 4,
            seed,
            ..small(seed)
        };
        let s = generate_scenario(&cfg).unwrap();
        let summary = verify_all(&s.scm, None, 1e-12).unwrap();
        assert!(summary.pass, "{}", summary.max_abs_diff);
    }
}

#[test]
fn funnel_injection_at_x1_ranks_x1_first() {
    let cfg = ScenarioConfig {
        structure: Structure::Funnel,
        p: 4,
        injection: rootcause_core::bench::InjectionConfig {
            target: TargetPolicy::Fixed { coordinate: 0 },
            magnitude: 4.0,
        },
        ..small(1)
    };
    let report = run_detection(&generate_scenario(&cfg).unwrap(), &PipelineConfig::default()).unwrap();
    assert!(report.oracle.top1 >= 0.9, "{}", report.oracle.top1);
    assert!(report.pipeline.top1 >= 0.9, "{}", report.pipeline.top1);
}

#[test]
fn non_ancestor_injection_gets_no_oracle_credit() {
    let cfg = ScenarioConfig {
        injection: rootcause_core::bench::InjectionConfig {
            target: TargetPolicy::NonAncestor,
            magnitude: 4.0,
        },
        ..small(2)
    };
    let report = run_detection(&generate_scenario(&cfg).unwrap(), &PipelineConfig::default()).unwrap();
    assert!(report.oracle.mean_target_score.abs() < 1e-10);
    for p in &report.patients {
        assert!(p.s_oracle[p.target].abs() < 1e-10);
    }
}

#[test]
fn equal_effect_scaling_equalizes_total_effects() {
    for family in ["linear-laplace", "discrete-binary"] {
        let cfg = ScenarioConfig {
            family: family.into(),
            ..small(4)
        };
        let s = generate_scenario(&cfg).unwrap();
        let base: Vec<f64> = s.scm.errors().iter().map(|d| d.mean()).collect();
        let z0 = s.scm.label_log_odds(&s.scm.push_forward(&base).unwrap());
        for c in 0..cfg.p {
            let mut e = base.clone();
            e[c] += s.scm.errors()[c].sd();
            let dz = s.scm.label_log_odds(&s.scm.push_forward(&e).unwrap()) - z0;
            assert!((dz - cfg.label.strength).abs() < 1e-6, "{family} coordinate {c}: {dz}");
        }
    }
}

#[test]
fn parent_sd_scaling_is_available() {
    let mut cfg = small(5);
    cfg.label.scaling = LabelScaling::ParentSd;
    let report = run_detection(&generate_scenario(&cfg).unwrap(), &PipelineConfig::default()).unwrap();
    assert!(finite(&report));
}

#[test]
fn accuracy_grows_with_magnitude() {
    let top1 = |magnitude: f64| {
        let mut cfg = small(6);
        cfg.injection.magnitude = magnitude;
        let r = run_detection(&generate_scenario(&cfg).unwrap(), &PipelineConfig::default()).unwrap();
        (r.oracle.top1, r.oracle.top1_stderr)
    };
    let (a1, s1) = top1(1.0);
    let (a2, s2) = top1(2.0);
    let (a4, s4) = top1(4.0);
    assert!(a2 >= a1 - 3.0 * (s1 * s1 + s2 * s2).sqrt(), "{a1} {a2}");
    assert!(a4 >= a2 - 3.0 * (s2 * s2 + s4 * s4).sqrt(), "{a2} {a4}");
    assert!(a4 > a1);
}

#[test]
fn oracle_dominates_the_estimated_pipeline() {
    let reports = run_repetitions(&small(20), &PipelineConfig::default(), 4).unwrap();
    let n = reports.len() as f64;
    let diffs: Vec<f64> = reports.iter().map(|r| r.oracle.top1 - r.pipeline.top1).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean >= -3.0 * sd / n.sqrt() - 1e-12, "{diffs:?}");
    assert_eq!(reports.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![20, 21, 22, 23]);
}
