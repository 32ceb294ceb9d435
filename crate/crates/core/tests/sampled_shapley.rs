mod common;

use common::{or_model, patients, random_discrete};
use rootcause_core::attribution::{
    attribute, AttributionError, CoalitionValue, EstimatorInfo, ExactShapley, SampledShapley, ShapleyEstimator,
    Transform,
};
use rootcause_core::diagnosis::{DiagnosisModel, Marginalizer, Sampling};

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn two_coordinates_are_exhausted_by_one_pair() {
    let model = DiagnosisModel::exact_synthetic(or_model());
    for e in [[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]] {
        let exact = attribute(&model, &e, Transform::identity(), Sampling::Exact, &ExactShapley).unwrap();
        let est = SampledShapley::new(2, 17).unwrap();
        let sampled = attribute(&model, &e, Transform::identity(), Sampling::Exact, &est).unwrap();
        assert!(max_abs(&exact.s, &sampled.s) < 1e-12);
    }
}

#[test]
fn sampled_estimates_are_unbiased() {
    let rm = random_discrete(61, 6, false);
    let model = DiagnosisModel::exact_synthetic(rm.scm.clone());
    let marg = Marginalizer::new(&model, Sampling::Exact).unwrap();
    let e = &patients(&rm.scm)[17];
    let cv = CoalitionValue::new(&marg, e, Transform::identity()).unwrap();
    let exact = ExactShapley.estimate(&cv).unwrap().s;
    let runs = 200;
    let draws: Vec<Vec<f64>> = (0..runs)
        .map(|seed| SampledShapley::new(8, seed).unwrap().estimate(&cv).unwrap().s)
        .collect();
    for i in 0..6 {
        let xs: Vec<f64> = draws.iter().map(|s| s[i]).collect();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - exact[i]).abs() <= 3.0 * se + 1e-12, "coordinate {i}: {mean} vs {} (se {se})", exact[i]);
    }
}

#[test]
fn error_shrinks_like_inverse_root_permutations() {
    let rm = random_discrete(62, 8, false);
    let model = DiagnosisModel::exact_synthetic(rm.scm.clone());
    let marg = Marginalizer::new(&model, Sampling::Exact).unwrap();
    let e = &patients(&rm.scm)[100];
    let cv = CoalitionValue::new(&marg, e, Transform::identity()).unwrap();
    let exact = ExactShapley.estimate(&cv).unwrap().s;
    let counts = [8usize, 32, 128, 512];
    let reps = 40;
    let errs: Vec<f64> = counts
        .iter()
        .map(|&n| {
            (0..reps)
                .map(|seed| max_abs(&SampledShapley::new(n, 1000 + seed).unwrap().estimate(&cv).unwrap().s, &exact))
                .sum::<f64>()
                / reps as f64
        })
        .collect();
    let xs: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}, errors {errs:?}");
}

#[test]
fn seeds_fix_the_output_and_report_standard_errors() {
    let rm = random_discrete(63, 5, false);
    let model = DiagnosisModel::exact_synthetic(rm.scm.clone());
    let e = &patients(&rm.scm)[3];
    let est = SampledShapley::new(16, 5).unwrap();
    let a = attribute(&model, e, Transform::logit(), Sampling::Exact, &est).unwrap();
    let b = attribute(&model, e, Transform::logit(), Sampling::Exact, &est).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.stderr.as_ref().map(Vec::len), Some(5));
    assert!(matches!(a.estimator, EstimatorInfo::Sampled { permutations: 16, seed: 5, .. }));
    // the reported sum still matches the total effect
    assert!((a.s.iter().sum::<f64>() - a.phi_total).abs() < 1e-10);
}

#[test]
fn exact_mode_refuses_wide_models() {
    let p = 13;
    let bg = ndarray::Array2::from_shape_fn((8, p), |(r, c)| ((r + c) % 3) as f64);
    let model = DiagnosisModel::logistic(0.0, vec![0.1; p], None).with_raw_background(bg).unwrap();
    let e = vec![1.0; p];
    let err = attribute(&model, &e, Transform::logit(), Sampling::BackgroundRows, &ExactShapley).unwrap_err();
    assert!(matches!(err, AttributionError::UseSampled { p: 13, threshold: 12 }));
    let est = SampledShapley::new(64, 0).unwrap();
    let res = attribute(&model, &e, Transform::logit(), Sampling::BackgroundRows, &est).unwrap();
    assert!((res.s.iter().sum::<f64>() - res.phi_total).abs() < 1e-10);
}
