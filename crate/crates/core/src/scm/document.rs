//! JSON document for graphs and models.
//!
//! ```json
//! {
//!   "variables": ["X1", "X2", "D"],
//!   "edges": [["X1", "X2"], ["X2", "D"]],
//!   "diagnosis": "D",
//!   "mechanisms": [
//!     {"variable": "X1", "kind": "root"},
//!     {"variable": "X2", "kind": "linear", "weights": [0.8]},
//!     {"variable": "D", "kind": "logistic_label", "intercept": -1.0, "weights": [2.0]}
//!   ],
//!   "errors": [
//!     {"variable": "X1", "kind": "laplace", "mu": 0.0, "b": 1.0},
//!     {"variable": "X2", "kind": "discrete", "support": [0.0, 1.0], "probs": [0.5, 0.5]}
//!   ]
//! }
//! ```
//!
//! Edge endpoints may be names or vertex indices. Parameter lists follow the
//! vertex's parents in ascending order of their position in `variables`.
//! `mechanisms` and `errors` may be omitted when only the structure is needed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ErrorDistribution, ErrorOverride, Mechanism, Scm, ScmError};
use crate::graph::CausalGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeEndpoint {
    Name(String),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismEntry {
    pub variable: String,
    #[serde(flatten)]
    pub mechanism: Mechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub variable: String,
    #[serde(flatten)]
    pub distribution: ErrorDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEntry {
    pub variable: String,
    #[serde(flatten)]
    pub action: ErrorOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmDocument {
    pub variables: Vec<String>,
    pub edges: Vec<[EdgeEndpoint; 2]>,
    pub diagnosis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanisms: Option<Vec<MechanismEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<Vec<ErrorEntry>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interventions: Vec<InterventionEntry>,
}

impl ScmDocument {
    pub fn from_json(text: &str) -> Result<Self, ScmError> {
        serde_json::from_str(text).map_err(|e| ScmError::Document(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    fn index(&self, name: &str) -> Result<usize, ScmError> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| ScmError::Document(format!("unknown variable {name:?}")))
    }

    pub fn graph(&self) -> Result<CausalGraph, ScmError> {
        let mut names = self.variables.clone();
        names.sort();
        names.dedup();
        if names.len() != self.variables.len() {
            return Err(ScmError::Document("duplicate variable names".into()));
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for [u, v] in &self.edges {
            edges.push((self.endpoint(u)?, self.endpoint(v)?));
        }
        let diagnosis = self.index(&self.diagnosis)?;
        Ok(CausalGraph::new(
            self.variables.len(),
            edges,
            diagnosis,
            Some(self.variables.clone()),
        )?)
    }

    fn endpoint(&self, e: &EdgeEndpoint) -> Result<usize, ScmError> {
        match e {
            EdgeEndpoint::Name(n) => self.index(n),
            EdgeEndpoint::Index(i) if *i < self.variables.len() => Ok(*i),
            EdgeEndpoint::Index(i) => Err(ScmError::Document(format!("edge index {i} out of range"))),
        }
    }

    pub fn to_scm(&self) -> Result<Scm, ScmError> {
        let graph = self.graph()?;
        let entries = self
            .mechanisms
            .as_ref()
            .ok_or_else(|| ScmError::Document("document has no mechanisms".into()))?;
        let error_entries = self
            .errors
            .as_ref()
            .ok_or_else(|| ScmError::Document("document has no error distributions".into()))?;

        let mut mechanisms: Vec<Option<Mechanism>> = vec![None; graph.n()];
        for entry in entries {
            let v = self.index(&entry.variable)?;
            if mechanisms[v].replace(entry.mechanism.clone()).is_some() {
                return Err(ScmError::Document(format!(
                    "duplicate mechanism for {}",
                    entry.variable
                )));
            }
        }
        let mechanisms = mechanisms
            .into_iter()
            .enumerate()
            .map(|(v, m)| {
                m.ok_or_else(|| {
                    ScmError::Document(format!("missing mechanism for {}", graph.label(v)))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut errors: Vec<Option<ErrorDistribution>> = vec![None; graph.p()];
        for entry in error_entries {
            let v = self.index(&entry.variable)?;
            let c = graph.vertex_coord(v).ok_or_else(|| {
                ScmError::Document("the diagnosis has no error distribution".into())
            })?;
            if errors[c].replace(entry.distribution.clone()).is_some() {
                return Err(ScmError::Document(format!(
                    "duplicate error distribution for {}",
                    entry.variable
                )));
            }
        }
        let errors = errors
            .into_iter()
            .enumerate()
            .map(|(c, d)| {
                d.ok_or_else(|| {
                    ScmError::Document(format!(
                        "missing error distribution for {}",
                        graph.label(graph.coord_vertex(c))
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let scm = Scm::new(graph, mechanisms, errors)?;
        if self.interventions.is_empty() {
            return Ok(scm);
        }
        let mut overrides = BTreeMap::new();
        for entry in &self.interventions {
            let v = self.index(&entry.variable)?;
            let c = scm.graph().vertex_coord(v).ok_or_else(|| {
                ScmError::Document("cannot intervene on the diagnosis error".into())
            })?;
            overrides.insert(c, entry.action);
        }
        Ok(scm.with_overrides(overrides))
    }

    pub fn from_graph(graph: &CausalGraph) -> Self {
        let names = graph.labels().to_vec();
        Self {
            edges: graph
                .edges()
                .iter()
                .map(|&(u, v)| {
                    [
                        EdgeEndpoint::Name(names[u].clone()),
                        EdgeEndpoint::Name(names[v].clone()),
                    ]
                })
                .collect(),
            diagnosis: names[graph.diagnosis()].clone(),
            variables: names,
            mechanisms: None,
            errors: None,
            interventions: Vec::new(),
        }
    }

    pub fn from_scm(scm: &Scm) -> Self {
        let graph = scm.graph();
        let mut doc = Self::from_graph(graph);
        doc.mechanisms = Some(
            scm.mechanisms()
                .iter()
                .enumerate()
                .map(|(v, m)| MechanismEntry {
                    variable: graph.label(v).to_string(),
                    mechanism: m.clone(),
                })
                .collect(),
        );
        doc.errors = Some(
            scm.errors()
                .iter()
                .enumerate()
                .map(|(c, d)| ErrorEntry {
                    variable: graph.label(graph.coord_vertex(c)).to_string(),
                    distribution: d.clone(),
                })
                .collect(),
        );
        doc.interventions = scm
            .overrides()
            .iter()
            .map(|(&c, &action)| InterventionEntry {
                variable: graph.label(graph.coord_vertex(c)).to_string(),
                action,
            })
            .collect();
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::Primitive;

    const FIXTURE: &str = r#"{
        "variables": ["X1", "X2", "D"],
        "edges": [["X1", "X2"], [1, 2]],
        "diagnosis": "D",
        "mechanisms": [
            {"variable": "X2", "kind": "additive", "terms": [{"op": "tanh", "scale": 1.0, "gain": 0.5}]},
            {"variable": "X1", "kind": "root"},
            {"variable": "D", "kind": "logistic_label", "intercept": -1.0, "weights": [2.0]}
        ],
        "errors": [
            {"variable": "X1", "kind": "laplace", "mu": 0.0, "b": 1.0},
            {"variable": "X2", "kind": "discrete", "support": [0.0, 1.0], "probs": [0.25, 0.75]}
        ]
    }"#;

    #[test]
    fn parses_and_roundtrips() {
        let doc = ScmDocument::from_json(FIXTURE).unwrap();
        let scm = doc.to_scm().unwrap();
        assert_eq!(
            scm.mechanisms()[1],
            Mechanism::Additive {
                terms: vec![Primitive::Tanh { scale: 1.0, gain: 0.5 }]
            }
        );
        let again = ScmDocument::from_json(&ScmDocument::from_scm(&scm).to_json_pretty())
            .unwrap()
            .to_scm()
            .unwrap();
        assert_eq!(scm, again);
    }

    #[test]
    fn structure_only_document() {
        let doc = ScmDocument::from_json(
            r#"{"variables": ["A", "B", "D"], "edges": [["A", "B"]], "diagnosis": "D"}"#,
        )
        .unwrap();
        assert_eq!(doc.graph().unwrap().parents(1), &[0]);
        assert!(matches!(doc.to_scm(), Err(ScmError::Document(_))));
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(ScmDocument::from_json("{").is_err());
        let unknown = FIXTURE.replace(r#"["X1", "X2"]"#, r#"["X1", "Z"]"#);
        assert!(ScmDocument::from_json(&unknown).unwrap().graph().is_err());
        let extra = FIXTURE.replace(r#""diagnosis": "D","#, r#""diagnosis": "D", "bogus": 1,"#);
        assert!(ScmDocument::from_json(&extra).is_err());
    }
}
