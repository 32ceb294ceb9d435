use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rootcause_core::bench::rmse_columns;
use rootcause_core::extraction::{
    build_extractor, extract_oracle, BottomUpAdditive, ErrorExtractor, ExtractionConfig, ExtractionError, KnnSmoother,
    SmootherConfig, TopDownLinear,
};
use rootcause_core::graph::{random_dag_edges, CausalGraph};
use rootcause_core::scm::{ErrorDistribution, Mechanism, Primitive, Scm};

fn laplace() -> ErrorDistribution {
    ErrorDistribution::laplace_with_sd(0.0, 1.0)
}

fn pair(second: Mechanism) -> Scm {
    let g = CausalGraph::new(3, [(0, 1), (1, 2)], 2, None).unwrap();
    Scm::new(
        g,
        vec![
            Mechanism::Root,
            second,
            Mechanism::LogisticLabel {
                intercept: 0.0,
                weights: vec![1.0],
            },
        ],
        vec![laplace(); 2],
    )
    .unwrap()
}

fn random_linear(seed: u64, p: usize) -> Scm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = random_dag_edges(p, 0.5, &mut rng);
    edges.sort_unstable();
    edges.extend((0..p).map(|v| (v, p)));
    let g = CausalGraph::new(p + 1, edges, p, None).unwrap();
    let mut mechs: Vec<Mechanism> = (0..p)
        .map(|v| match g.parents(v).len() {
            0 => Mechanism::Root,
            k => Mechanism::Linear {
                weights: (0..k).map(|_| rng.random_range(-1.2..1.2)).collect(),
            },
        })
        .collect();
    mechs.push(Mechanism::LogisticLabel {
        intercept: 0.0,
        weights: vec![0.3; p],
    });
    Scm::new(g, mechs, vec![laplace(); p]).unwrap()
}

#[test]
fn single_linear_edge_recovers_weight_and_errors() {
    let scm = pair(Mechanism::Linear { weights: vec![0.8] });
    let data = scm.sample(10_000, 4).unwrap();
    let fit = TopDownLinear::new(0.0, true).unwrap().extract(data.x.view(), scm.graph()).unwrap();
    let w = fit.diagnostics[1].coefficients.as_ref().unwrap()[0];
    assert!((w - 0.8).abs() < 0.02, "{w}");
    assert!(rmse_columns(&fit.e_hat, &data.e)[1] < 0.02);
}

#[test]
fn random_linear_dag_topdown_and_knn() {
    let scm = random_linear(3, 5);
    let data = scm.sample(20_000, 8).unwrap();
    let top = build_extractor(&ExtractionConfig::default()).unwrap();
    let e_top = top.extract(data.x.view(), scm.graph()).unwrap().e_hat;
    for r in rmse_columns(&e_top, &data.e) {
        assert!(r < 0.02, "{r}");
    }
    let cfg = ExtractionConfig {
        mode: "bottomup-additive".into(),
        smoother: SmootherConfig {
            kind: "knn".into(),
            k: None,
            bandwidth: None,
        },
        ..ExtractionConfig::default()
    };
    let e_knn = build_extractor(&cfg).unwrap().extract(data.x.view(), scm.graph()).unwrap().e_hat;
    for r in rmse_columns(&e_knn, &data.e) {
        assert!(r < 0.1, "{r}");
    }
}

#[test]
fn knn_noise_floor_is_one_over_root_k() {
    // the fitted mean carries the average of k neighbour errors
    let scm = pair(Mechanism::Linear { weights: vec![0.8] });
    let data = scm.sample(20_000, 6).unwrap();
    let knn = BottomUpAdditive::new(Box::new(KnnSmoother::new(Some(50)).unwrap()));
    let r = rmse_columns(&knn.extract(data.x.view(), scm.graph()).unwrap().e_hat, &data.e)[1];
    let floor = (1.0f64 / 50.0).sqrt();
    assert!(r > 0.9 * floor && r < 1.3 * floor, "{r}");
}

#[test]
fn additive_tanh_edge_recovered_by_smoothers() {
    let scm = pair(Mechanism::Additive {
        terms: vec![Primitive::Tanh { scale: 1.0, gain: 1.0 }],
    });
    let data = scm.sample(20_000, 5).unwrap();
    for (smoother, bandwidth) in [("knn", None), ("local-linear", Some(0.3))] {
        let cfg = ExtractionConfig {
            mode: "bottomup-additive".into(),
            smoother: SmootherConfig {
                kind: smoother.into(),
                k: None,
                bandwidth,
            },
            ..ExtractionConfig::default()
        };
        let e = build_extractor(&cfg).unwrap().extract(data.x.view(), scm.graph()).unwrap().e_hat;
        let r = rmse_columns(&e, &data.e)[1];
        assert!(r < 0.1, "{smoother}: {r}");
    }
}

#[test]
fn identical_rows_leave_constant_offsets() {
    let g = CausalGraph::new(3, [(0, 1), (1, 2)], 2, None).unwrap();
    let x = Array2::from_shape_fn((60, 2), |(_, c)| if c == 0 { 1.5 } else { -0.25 });
    let knn = BottomUpAdditive::new(Box::new(KnnSmoother::new(Some(10)).unwrap()));
    let e = knn.extract(x.view(), &g).unwrap().e_hat;
    let first = e[[0, 1]];
    assert!(e.column(1).iter().all(|&v| v == first));
    assert_eq!(e.column(0), x.column(0));
}

#[test]
fn too_few_rows_for_the_parents() {
    let g = CausalGraph::new(5, [(0, 3), (1, 3), (2, 3), (3, 4)], 4, None).unwrap();
    let x = Array2::from_shape_vec((2, 4), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
    let err = TopDownLinear::new(0.0, true).unwrap().extract(x.view(), &g).unwrap_err();
    assert!(matches!(err, ExtractionError::Precondition(_)));
}

#[test]
fn fitted_extraction_transforms_new_rows_consistently() {
    let scm = random_linear(11, 4);
    let train = scm.sample(5_000, 1).unwrap();
    let fitted = TopDownLinear::new(0.0, true).unwrap().fit(train.x.view(), scm.graph()).unwrap();
    assert_eq!(fitted.transform(train.x.view()).unwrap(), fitted.training().e_hat);
    let fresh = scm.sample(500, 2).unwrap();
    let e = fitted.transform(fresh.x.view()).unwrap();
    for r in rmse_columns(&e, &fresh.e) {
        assert!(r < 0.05);
    }
}

#[test]
fn oracle_extraction_is_exact() {
    let scm = random_linear(12, 6);
    let data = scm.sample(1_000, 3).unwrap();
    let e = extract_oracle(&scm, data.x.view()).unwrap();
    let worst = e.iter().zip(data.e.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12);
}

proptest! {
    #[test]
    fn roundtrip_on_random_dags(seed in 0u64..1000, p in 2usize..8, e in proptest::collection::vec(-5.0f64..5.0, 8)) {
        let scm = random_linear(seed, p);
        let e = &e[..p];
        let back = scm.invert(&scm.push_forward(e).unwrap()).unwrap();
        for (a, b) in back.iter().zip(e) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn root_columns_are_the_raw_data(seed in 0u64..1000, p in 2usize..6, bottom_up in any::<bool>()) {
        let scm = random_linear(seed, p);
        let data = scm.sample(120, seed).unwrap();
        let cfg = if bottom_up {
            ExtractionConfig {
                mode: "bottomup-additive".into(),
                ..ExtractionConfig::default()
            }
        } else {
            ExtractionConfig::default()
        };
        let fit = build_extractor(&cfg).unwrap().extract(data.x.view(), scm.graph()).unwrap();
        for v in (0..p).filter(|&v| scm.graph().is_root(v)) {
            for (a, b) in fit.e_hat.column(v).iter().zip(data.x.column(v)) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
