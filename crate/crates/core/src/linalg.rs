//! Small dense linear-algebra helpers shared by the posterior and
//! information-gain code.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, FactorDiagnostics, Result};

/// Diagonal boosts tried, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// A Cholesky factor together with the jitter that had to be added.
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log det` of the factored matrix (including any jitter).
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Factor a symmetric positive definite matrix, escalating diagonal jitter
/// through [`JITTER_LADDER`] before giving up.
pub fn cholesky_with_jitter(matrix: &DMatrix<f64>) -> Result<Factor> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::input(format!(
            "cannot factor a non-square {}x{} matrix",
            n,
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization(diagnostics(matrix, 0.0)));
    }
    for &jitter in JITTER_LADDER.iter() {
        let mut boosted = matrix.clone();
        if jitter > 0.0 {
            for i in 0..n {
                boosted[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(boosted) {
            let l = chol.l_dirty();
            if (0..n).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Ok(Factor { chol, jitter });
            }
        }
    }
    Err(Error::Factorization(diagnostics(
        matrix,
        JITTER_LADDER[JITTER_LADDER.len() - 1],
    )))
}

fn diagnostics(matrix: &DMatrix<f64>, jitter: f64) -> FactorDiagnostics {
    let diag = matrix.diagonal();
    FactorDiagnostics {
        size: matrix.nrows(),
        min_diagonal: diag.iter().cloned().fold(f64::INFINITY, f64::min),
        max_diagonal: diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        last_jitter: jitter,
    }
}

/// `log det(I + scale * A)` for symmetric PSD `A`.
pub fn log_det_identity_plus(a: &DMatrix<f64>, scale: f64) -> Result<f64> {
    let n = a.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut m = a * scale;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    Ok(cholesky_with_jitter(&m)?.log_det())
}

/// Diagonal jitter applied to stand-alone kernel matrices before PSD checks.
pub fn standalone_jitter(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows().max(1) as f64;
    1e-10 * f64::max(1.0, matrix.trace() / n)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// PSD test used for kernel matrices: after the stand-alone jitter, the
/// smallest eigenvalue must be at least `-tol * max(1, trace)`.
pub fn is_psd(matrix: &DMatrix<f64>, tol: f64) -> bool {
    let mut m = matrix.clone();
    let jitter = standalone_jitter(matrix);
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    min_eigenvalue(&m) >= -tol * f64::max(1.0, matrix.trace())
}

pub fn is_symmetric(matrix: &DMatrix<f64>, tol: f64) -> bool {
    matrix.nrows() == matrix.ncols()
        && (0..matrix.nrows())
            .all(|i| (0..i).all(|j| (matrix[(i, j)] - matrix[(j, i)]).abs() <= tol))
}
