//! Backtracking conditionals `P(E* | E)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel shape: {0}")]
    Shape(String),
    #[error("row {row} of coordinate {coord} does not sum to one")]
    Normalization { coord: usize, row: usize },
    #[error("closeness violated: coordinate {coord}, factual value index {row} is not the unique most likely counterfactual value")]
    Closeness { coord: usize, row: usize },
    #[error("symmetry violated: coordinate {coord}, P({a}|{b}) != P({b}|{a})")]
    Symmetry { coord: usize, a: usize, b: usize },
    #[error("decomposability violated: joint entry (factual state {factual}, counterfactual state {counterfactual}) is not the product of its coordinate factors")]
    Decomposability { factual: usize, counterfactual: usize },
}

impl KernelError {
    /// Name of the violated desideratum, if any.
    pub fn desideratum(&self) -> Option<&'static str> {
        match self {
            KernelError::Closeness { .. } => Some("closeness"),
            KernelError::Symmetry { .. } => Some("symmetry"),
            KernelError::Decomposability { .. } => Some("decomposability"),
            _ => None,
        }
    }
}

/// `table[a][b] = P(E*_i = support[b] | E_i = support[a])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateKernel {
    pub support: Vec<f64>,
    pub table: Vec<Vec<f64>>,
}

impl CoordinateKernel {
    fn validate(&self, coord: usize) -> Result<(), KernelError> {
        let k = self.support.len();
        if k == 0 || self.table.len() != k || self.table.iter().any(|r| r.len() != k) {
            return Err(KernelError::Shape(format!(
                "coordinate {coord} needs a {k}x{k} table"
            )));
        }
        for (a, row) in self.table.iter().enumerate() {
            if row.iter().any(|&q| !(0.0..=1.0).contains(&q))
                || (row.iter().sum::<f64>() - 1.0).abs() > TOL
            {
                return Err(KernelError::Normalization { coord, row: a });
            }
        }
        for a in 0..k {
            for b in 0..k {
                if a != b && self.table[a][b] >= self.table[a][a] {
                    return Err(KernelError::Closeness { coord, row: a });
                }
            }
        }
        for a in 0..k {
            for b in (a + 1)..k {
                if (self.table[a][b] - self.table[b][a]).abs() > TOL {
                    return Err(KernelError::Symmetry { coord, a, b });
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.support.iter().position(|&s| s == value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BacktrackingKernel {
    /// `P(E* = e | e) = 1`: counterfactual error values equal the factual ones.
    Degenerate,
    DiscreteTable { coordinates: Vec<CoordinateKernel> },
}

impl BacktrackingKernel {
    pub fn from_coordinate_tables(coordinates: Vec<CoordinateKernel>) -> Result<Self, KernelError> {
        for (c, k) in coordinates.iter().enumerate() {
            k.validate(c)?;
        }
        Ok(BacktrackingKernel::DiscreteTable { coordinates })
    }

    /// Builds a kernel from a joint table over product states. States are
    /// mixed-radix numbers with coordinate 0 most significant;
    /// `joint[s][t] = P(E* = state t | E = state s)`.
    pub fn from_joint_table(supports: Vec<Vec<f64>>, joint: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let sizes: Vec<usize> = supports.iter().map(Vec::len).collect();
        let total: usize = sizes.iter().product();
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(KernelError::Shape("empty support".into()));
        }
        if joint.len() != total || joint.iter().any(|r| r.len() != total) {
            return Err(KernelError::Shape(format!("joint table must be {total}x{total}")));
        }
        let digits = |mut s: usize| -> Vec<usize> {
            let mut d = vec![0; sizes.len()];
            for i in (0..sizes.len()).rev() {
                d[i] = s % sizes[i];
                s /= sizes[i];
            }
            d
        };
        for (s, row) in joint.iter().enumerate() {
            if row.iter().any(|&q| !(0.0..=1.0).contains(&q))
                || (row.iter().sum::<f64>() - 1.0).abs() > TOL
            {
                return Err(KernelError::Normalization { coord: 0, row: s });
            }
        }

        // Coordinate factors read off as marginals with every other factual
        // coordinate at its first support value.
        let mut coordinates = Vec::with_capacity(sizes.len());
        for (i, &k) in sizes.iter().enumerate() {
            let mut table = vec![vec![0.0; k]; k];
            for (s, row) in joint.iter().enumerate() {
                let ds = digits(s);
                if ds.iter().enumerate().any(|(j, &d)| j != i && d != 0) {
                    continue;
                }
                for (t, &q) in row.iter().enumerate() {
                    table[ds[i]][digits(t)[i]] += q;
                }
            }
            coordinates.push(CoordinateKernel {
                support: supports[i].clone(),
                table,
            });
        }
        for (s, row) in joint.iter().enumerate() {
            let ds = digits(s);
            for (t, &q) in row.iter().enumerate() {
                let dt = digits(t);
                let product: f64 = coordinates
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k.table[ds[i]][dt[i]])
                    .product();
                if (product - q).abs() > TOL {
                    return Err(KernelError::Decomposability {
                        factual: s,
                        counterfactual: t,
                    });
                }
            }
        }
        Self::from_coordinate_tables(coordinates)
    }
}
