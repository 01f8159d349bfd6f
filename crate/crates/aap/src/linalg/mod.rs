//! Dense linear-algebra kernels used by the solvers and diagnostics.
//!
//! Everything here operates on small, dense matrices (typically `d x m`
//! with `m <= ~20` columns holding iterate or residual vectors), where
//! robustness under poor conditioning matters more than speed. Least
//! squares goes through pivoted Householder QR with a rank tolerance,
//! singular values through one-sided Jacobi.

mod eig;
mod gmres;
mod nnls;
mod qr;
mod svd;

pub use eig::symmetric_eigen;
pub use gmres::arnoldi_gmres;
pub use nnls::nnls;
pub use qr::{qr_least_squares, LsSolution};
pub use svd::{pseudoinverse_apply, singular_values, svd, Svd};

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Default relative threshold below which pivoted-QR columns and SVD
/// singular values are treated as dependent and dropped.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("NNLS failed to converge after {iterations} active-set iterations")]
    NnlsMaxIterations {
        iterations: usize,
        /// Best feasible iterate found before giving up.
        best: Array1<f64>,
    },
}

pub(crate) fn check_finite_vec(v: &Array1<f64>, what: &'static str) -> Result<(), LinalgError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite(what))
    }
}

pub(crate) fn check_finite_mat(a: &Array2<f64>, what: &'static str) -> Result<(), LinalgError> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite(what))
    }
}

/// Euclidean norm.
pub fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Induced 2-norm (largest singular value); 0 for empty matrices.
pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0.0;
    }
    singular_values(a)[0]
}

/// Ratio of largest to smallest singular value; `f64::INFINITY` when the
/// smallest singular value underflows to zero.
pub fn condition_number(a: &Array2<f64>) -> f64 {
    let s = singular_values(a);
    let smax = s[0];
    let smin = s[s.len() - 1];
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}
