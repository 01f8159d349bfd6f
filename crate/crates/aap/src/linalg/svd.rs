use ndarray::{Array1, Array2};

use super::{check_finite_mat, check_finite_vec, LinalgError};

/// Thin singular value decomposition `A = U diag(sigma) V^T` with
/// `U: n x k`, `sigma: k`, `V: k x k` for `k = min(n, cols)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

const MAX_SWEEPS: usize = 60;

/// One-sided Jacobi SVD. Robust for the small `d x m` matrices used
/// throughout; columns are orthogonalized pairwise until convergence.
pub fn svd(a: &Array2<f64>) -> Result<Svd, LinalgError> {
    check_finite_mat(a, "svd input")?;
    let (n, k) = (a.nrows(), a.ncols());
    if n >= k {
        svd_tall(a)
    } else {
        // Work on the transpose and swap the factors back.
        let s = svd_tall(&a.t().to_owned())?;
        Ok(Svd {
            u: s.v,
            sigma: s.sigma,
            v: s.u,
        })
    }
}

fn svd_tall(a: &Array2<f64>) -> Result<Svd, LinalgError> {
    let (n, k) = (a.nrows(), a.ncols());
    let mut b = a.clone();
    let mut v = Array2::<f64>::eye(k);
    let eps = f64::EPSILON;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..n {
                    app += b[[i, p]] * b[[i, p]];
                    aqq += b[[i, q]] * b[[i, q]];
                    apq += b[[i, p]] * b[[i, q]];
                }
                if apq.abs() <= eps * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let bp = b[[i, p]];
                    let bq = b[[i, q]];
                    b[[i, p]] = c * bp - s * bq;
                    b[[i, q]] = s * bp + c * bq;
                }
                for i in 0..k {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| b[[i, j]] * b[[i, j]]).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut u = Array2::<f64>::zeros((n, k));
    let mut sigma = Array1::<f64>::zeros(k);
    let mut vs = Array2::<f64>::zeros((k, k));
    for (col, &j) in order.iter().enumerate() {
        sigma[col] = norms[j];
        if norms[j] > 0.0 {
            for i in 0..n {
                u[[i, col]] = b[[i, j]] / norms[j];
            }
        }
        for i in 0..k {
            vs[[i, col]] = v[[i, j]];
        }
    }
    Ok(Svd { u, sigma, v: vs })
}

/// Singular values in descending order, length `min(rows, cols)`.
pub fn singular_values(a: &Array2<f64>) -> Array1<f64> {
    svd(a).expect("non-finite input to singular_values").sigma
}

/// Applies the truncated pseudoinverse: `A^dagger b` with singular values
/// below `rank_tol * sigma_max` discarded.
pub fn pseudoinverse_apply(
    a: &Array2<f64>,
    b: &Array1<f64>,
    rank_tol: f64,
) -> Result<Array1<f64>, LinalgError> {
    if a.nrows() != b.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "A has {} rows but b has length {}",
            a.nrows(),
            b.len()
        )));
    }
    check_finite_vec(b, "pseudoinverse rhs")?;
    if a.ncols() == 0 {
        return Ok(Array1::zeros(0));
    }
    let s = svd(a)?;
    let smax = s.sigma[0];
    let mut x = Array1::<f64>::zeros(a.ncols());
    if smax == 0.0 {
        return Ok(x);
    }
    for j in 0..s.sigma.len() {
        if s.sigma[j] < rank_tol * smax {
            break;
        }
        let coeff = s.u.column(j).dot(b) / s.sigma[j];
        for i in 0..a.ncols() {
            x[i] += coeff * s.v[[i, j]];
        }
    }
    Ok(x)
}
