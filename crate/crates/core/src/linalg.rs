use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive definite `a`. Returns `None` when
/// the Cholesky factor has a pivot below `1e-10` of the largest one.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if !max.is_finite() || diag.iter().any(|&d| !(d > 1e-10 * max.max(1e-300))) {
        return None;
    }
    Some(chol.solve(b))
}
