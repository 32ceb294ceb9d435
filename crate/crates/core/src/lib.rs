//! Patient-specific root cause attribution over structural equation models.
//!
//! The pipeline recovers exogenous error terms from observed data, fits a
//! model of `P(D = 1 | E)`, and scores each error coordinate of a patient by
//! its Shapley contribution to the gap between the patient and a typical
//! person. The counterfactual engine checks, by exhaustive enumeration on
//! discrete models, that the interventional and backtracking readings of
//! these scores coincide.

pub mod graph;
pub mod scm;
pub mod attribution;
pub mod bench;
pub mod counterfactual;
pub mod diagnosis;
pub mod extraction;
mod linalg;
pub mod registry;
