use ndarray::{Array1, Array2};

use super::{check_finite_mat, LinalgError};

const MAX_SWEEPS: usize = 60;

/// Eigendecomposition `A = Q diag(lambda) Q^T` of a symmetric matrix via
/// cyclic two-sided Jacobi rotations. Eigenvalues are returned in
/// descending order.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), LinalgError> {
    check_finite_mat(a, "symmetric_eigen input")?;
    let n = a.nrows();
    if n != a.ncols() {
        return Err(LinalgError::DimensionMismatch(format!(
            "matrix is {}x{}, expected square",
            n,
            a.ncols()
        )));
    }
    let mut m = a.clone();
    let mut q = Array2::<f64>::eye(n);
    let eps = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for r in p + 1..n {
                off += m[[p, r]] * m[[p, r]];
            }
        }
        let scale: f64 = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum();
        if off.sqrt() <= eps * scale.sqrt().max(eps) {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apq = m[[p, r]];
                if apq == 0.0 {
                    continue;
                }
                let zeta = (m[[r, r]] - m[[p, p]]) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let mp = m[[i, p]];
                    let mq = m[[i, r]];
                    m[[i, p]] = c * mp - s * mq;
                    m[[i, r]] = s * mp + c * mq;
                }
                for i in 0..n {
                    let mp = m[[p, i]];
                    let mq = m[[r, i]];
                    m[[p, i]] = c * mp - s * mq;
                    m[[r, i]] = s * mp + c * mq;
                }
                for i in 0..n {
                    let qp = q[[i, p]];
                    let qq = q[[i, r]];
                    q[[i, p]] = c * qp - s * qq;
                    q[[i, r]] = s * qp + c * qq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]));
    let mut lambda = Array1::zeros(n);
    let mut qs = Array2::zeros((n, n));
    for (col, &j) in order.iter().enumerate() {
        lambda[col] = m[[j, j]];
        for i in 0..n {
            qs[[i, col]] = q[[i, j]];
        }
    }
    Ok((lambda, qs))
}
