//! Exact checks that backtracking and interventional counterfactuals agree
//! with factual conditionals on discrete models.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    backtracking_counterfactual, enumerate_product, interventional_counterfactual, point_mass,
    Action, BacktrackEvidence, BacktrackingKernel, CounterfactualError, CounterfactualQuery,
    Evidence,
};
use crate::scm::Scm;

/// Largest `p` accepted by the verifier.
pub const MAX_VERIFY_P: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermPair {
    pub lhs: f64,
    pub rhs: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEquivalence {
    pub v: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub rhs_backtracking: f64,
    pub diff: f64,
}

/// Both identities for one patient and one resampled set `V`.
///
/// `point_lhs`: `P(D = 1 | e)` by conditioning the factual joint.
/// `point_rhs`: degenerate-kernel backtracking sum.
/// `set_lhs`: `E_{E*_V} P(D* = 1 | e_W, E*_V)` in the stochastic-copy submodel.
/// `set_rhs`: `E_{E_V} P(D = 1 | e_W, E_V)` by conditioning the factual joint on `e_W`.
/// `set_rhs_backtracking`: backtracking sum with `E*_W = e_W` and `E*_V ~ P(E_V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub e: Vec<f64>,
    pub v: Vec<usize>,
    pub point_lhs: f64,
    pub point_rhs: f64,
    pub set_lhs: f64,
    pub set_rhs: f64,
    pub set_rhs_backtracking: f64,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEquivalence {
    pub e: Vec<f64>,
    pub point: TermPair,
    pub subsets: Vec<SetEquivalence>,
    pub max_abs_diff: f64,
    pub pass: bool,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub patients: Vec<PatientEquivalence>,
    pub max_abs_diff: f64,
    pub pass: bool,
    pub tolerance: f64,
}

struct FactualJoint {
    states: Vec<(Vec<f64>, f64, f64)>,
}

impl FactualJoint {
    fn new(scm: &Scm) -> Result<Self, CounterfactualError> {
        if !scm.is_discrete() {
            return Err(CounterfactualError::Unsupported(
                "equivalence verification needs discrete error distributions".into(),
            ));
        }
        if scm.p() > MAX_VERIFY_P {
            return Err(CounterfactualError::Unsupported(format!(
                "p = {} exceeds the enumeration limit {MAX_VERIFY_P}",
                scm.p()
            )));
        }
        if !scm.overrides().is_empty() {
            return Err(CounterfactualError::Unsupported(
                "verify the original model, not a submodel".into(),
            ));
        }
        let atoms: Vec<Vec<(f64, f64)>> = scm
            .errors()
            .iter()
            .map(|d| d.atoms().expect("discrete"))
            .collect();
        let states = enumerate_product(&atoms)?
            .into_iter()
            .filter(|(_, q)| *q > 0.0)
            .map(|(s, q)| {
                let x = scm.push_forward(&s).expect("arity");
                let d = scm.label_probability(&x);
                (s, q, d)
            })
            .collect();
        Ok(Self { states })
    }

    /// `E[P(D = 1 | E) | E_W = e_W]` where `W` is the complement of `v`.
    fn conditional(&self, e: &[f64], v: &BTreeSet<usize>) -> Result<f64, CounterfactualError> {
        let (mut num, mut den) = (0.0, 0.0);
        for (s, q, d) in &self.states {
            if s.iter()
                .zip(e)
                .enumerate()
                .all(|(c, (a, b))| v.contains(&c) || a == b)
            {
                num += q * d;
                den += q;
            }
        }
        if den <= 0.0 {
            return Err(CounterfactualError::InconsistentEvidence);
        }
        Ok(num / den)
    }
}

fn resampling_backtrack(scm: &Scm, e: &[f64], v: &BTreeSet<usize>) -> Result<f64, CounterfactualError> {
    let rows: Vec<Vec<(f64, f64)>> = scm
        .errors()
        .iter()
        .enumerate()
        .map(|(c, d)| {
            if v.contains(&c) {
                d.atoms().expect("discrete")
            } else {
                vec![(e[c], 1.0)]
            }
        })
        .collect();
    let mut total = 0.0;
    for (e_star, q) in enumerate_product(&rows)? {
        let x = scm.push_forward(&e_star)?;
        total += q * scm.label_probability(&x);
    }
    Ok(total)
}

fn check_patient(scm: &Scm, e: &[f64]) -> Result<(), CounterfactualError> {
    if e.len() != scm.p() {
        return Err(crate::scm::ScmError::Arity {
            expected: scm.p(),
            got: e.len(),
        }
        .into());
    }
    if point_mass(scm, e) <= 0.0 {
        return Err(CounterfactualError::InconsistentEvidence);
    }
    Ok(())
}

fn point_identity(scm: &Scm, joint: &FactualJoint, e: &[f64]) -> Result<TermPair, CounterfactualError> {
    let lhs = joint.conditional(e, &BTreeSet::new())?;
    let rhs = backtracking_counterfactual(
        scm,
        &BacktrackingKernel::Degenerate,
        &BacktrackEvidence {
            counterfactual: vec![],
            factual: Evidence::Patient { e: e.to_vec() },
        },
        &[scm.graph().diagnosis()],
    )?
    .probability(scm.graph().diagnosis(), 1.0);
    Ok(TermPair {
        lhs,
        rhs,
        diff: (lhs - rhs).abs(),
    })
}

fn set_identity(scm: &Scm, joint: &FactualJoint, e: &[f64], v: &BTreeSet<usize>) -> Result<SetEquivalence, CounterfactualError> {
    let d = scm.graph().diagnosis();
    let query = CounterfactualQuery {
        evidence: Evidence::Patient { e: e.to_vec() },
        action: (!v.is_empty()).then(|| Action::stochastic_copy(v.clone())),
        targets: vec![d],
    };
    let lhs = interventional_counterfactual(scm, &query, 0, 0)?.probability(d, 1.0);
    let rhs = joint.conditional(e, v)?;
    let rhs_backtracking = resampling_backtrack(scm, e, v)?;
    Ok(SetEquivalence {
        v: v.iter().copied().collect(),
        lhs,
        rhs,
        rhs_backtracking,
        diff: (lhs - rhs).abs().max((lhs - rhs_backtracking).abs()),
    })
}

/// Checks both identities for patient `e` and resampled set `v`.
pub fn verify_equivalence(scm: &Scm, e: &[f64], v: &BTreeSet<usize>) -> Result<EquivalenceReport, CounterfactualError> {
    let joint = FactualJoint::new(scm)?;
    check_patient(scm, e)?;
    if let Some(&c) = v.iter().find(|&&c| c >= scm.p()) {
        return Err(CounterfactualError::InvalidAction(format!("coordinate {c} out of range")));
    }
    let point = point_identity(scm, &joint, e)?;
    let set = set_identity(scm, &joint, e, v)?;
    Ok(EquivalenceReport {
        e: e.to_vec(),
        v: set.v,
        point_lhs: point.lhs,
        point_rhs: point.rhs,
        set_lhs: set.lhs,
        set_rhs: set.rhs,
        set_rhs_backtracking: set.rhs_backtracking,
        max_abs_diff: point.diff.max(set.diff),
    })
}

fn verify_patient(scm: &Scm, joint: &FactualJoint, e: &[f64], tolerance: f64) -> Result<PatientEquivalence, CounterfactualError> {
    check_patient(scm, e)?;
    let point = point_identity(scm, joint, e)?;
    let p = scm.p();
    let mut sets = Vec::with_capacity(1 << p);
    for mask in 0u64..(1u64 << p) {
        let v: BTreeSet<usize> = (0..p).filter(|&c| mask >> c & 1 == 1).collect();
        sets.push(set_identity(scm, joint, e, &v)?);
    }
    let max_abs_diff = sets.iter().map(|s| s.diff).fold(point.diff, f64::max);
    Ok(PatientEquivalence {
        e: e.to_vec(),
        point,
        subsets: sets,
        max_abs_diff,
        pass: max_abs_diff < tolerance,
        tolerance,
    })
}

/// Checks every subset `V` for each given patient, or for every patient of
/// positive probability when `patients` is `None`.
pub fn verify_all(scm: &Scm, patients: Option<&[Vec<f64>]>, tolerance: f64) -> Result<VerificationSummary, CounterfactualError> {
    let joint = FactualJoint::new(scm)?;
    let all: Vec<Vec<f64>>;
    let patients = match patients {
        Some(list) => list,
        None => {
            all = joint.states.iter().map(|(s, _, _)| s.clone()).collect();
            &all
        }
    };
    let reports = patients
        .par_iter()
        .map(|e| verify_patient(scm, &joint, e, tolerance))
        .collect::<Result<Vec<_>, _>>()?;
    let max_abs_diff = reports.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max);
    Ok(VerificationSummary {
        pass: reports.iter().all(|r| r.pass),
        patients: reports,
        max_abs_diff,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::tests::or_model;

    #[test]
    fn or_model_examples() {
        let scm = or_model();
        let r = verify_equivalence(&scm, &[1.0, 1.0], &BTreeSet::from([1])).unwrap();
        assert_eq!((r.set_lhs, r.set_rhs), (1.0, 1.0));

        let r = verify_equivalence(&scm, &[0.0, 0.0], &BTreeSet::from([0, 1])).unwrap();
        assert!((r.set_rhs - 0.75).abs() < 1e-15);
        assert_eq!(r.point_lhs, 0.0);
        assert!(r.max_abs_diff < 1e-12);
    }

    #[test]
    fn empty_set_reduces_to_the_factual_conditional() {
        let scm = or_model();
        for e in [[0.0, 1.0], [1.0, 0.0]] {
            let r = verify_equivalence(&scm, &e, &BTreeSet::new()).unwrap();
            assert_eq!(r.set_rhs, r.point_lhs);
        }
    }

    #[test]
    fn continuous_models_are_rejected() {
        let scm = crate::scm::tests::chain(0.5);
        assert!(matches!(
            verify_equivalence(&scm, &[0.0, 0.0], &BTreeSet::new()),
            Err(CounterfactualError::Unsupported(_))
        ));
    }

    #[test]
    fn verify_all_covers_every_patient_and_subset() {
        let summary = verify_all(&or_model(), None, 1e-12).unwrap();
        assert_eq!(summary.patients.len(), 4);
        assert!(summary.patients.iter().all(|p| p.subsets.len() == 4));
        assert!(summary.pass);
    }
}
