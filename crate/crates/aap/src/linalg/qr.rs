use ndarray::{Array1, Array2};

use super::{check_finite_mat, check_finite_vec, norm, LinalgError};

/// Result of a rank-revealing least-squares solve.
#[derive(Debug, Clone)]
pub struct LsSolution {
    /// Coefficient vector, one entry per column of `A`; entries for
    /// dropped columns are exactly zero.
    pub solution: Array1<f64>,
    /// `||A x - b||` evaluated against the original inputs.
    pub residual_norm: f64,
    /// Number of columns retained by the pivoted-QR rank filter.
    pub effective_rank: usize,
    /// Original indices of the columns judged linearly dependent.
    pub dropped_columns: Vec<usize>,
}

/// Minimum-residual solve of `min ||A x - b||` via Householder QR with
/// column pivoting.
///
/// Columns whose pivoted diagonal ratio `|R_kk| / |R_11|` falls below
/// `rank_tol` are dropped; their solution entries are set to zero and
/// their indices reported in [`LsSolution::dropped_columns`].
pub fn qr_least_squares(
    a: &Array2<f64>,
    b: &Array1<f64>,
    rank_tol: f64,
) -> Result<LsSolution, LinalgError> {
    let (n, k) = (a.nrows(), a.ncols());
    if n != b.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "A has {} rows but b has length {}",
            n,
            b.len()
        )));
    }
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(LinalgError::DimensionMismatch(format!(
            "rank_tol must be in (0, 1), got {rank_tol}"
        )));
    }
    check_finite_mat(a, "qr_least_squares matrix")?;
    check_finite_vec(b, "qr_least_squares rhs")?;

    if k == 0 {
        return Ok(LsSolution {
            solution: Array1::zeros(0),
            residual_norm: norm(b),
            effective_rank: 0,
            dropped_columns: vec![],
        });
    }

    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..k).collect();
    let steps = n.min(k);
    let mut diag = vec![0.0f64; steps];
    let mut rank = 0usize;

    for j in 0..steps {
        // Pivot on the column with the largest remaining norm.
        let mut best = j;
        let mut best_norm = -1.0;
        for c in j..k {
            let nrm: f64 = (j..n).map(|i| r[[i, c]] * r[[i, c]]).sum::<f64>().sqrt();
            if nrm > best_norm {
                best_norm = nrm;
                best = c;
            }
        }
        if best != j {
            for i in 0..n {
                r.swap([i, j], [i, best]);
            }
            perm.swap(j, best);
        }

        // Householder reflector for column j, rows j..n.
        let alpha: f64 = (j..n).map(|i| r[[i, j]] * r[[i, j]]).sum::<f64>().sqrt();
        if alpha == 0.0 {
            diag[j] = 0.0;
            break;
        }
        let alpha = if r[[j, j]] > 0.0 { -alpha } else { alpha };
        let mut v: Vec<f64> = (j..n).map(|i| r[[i, j]]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        r[[j, j]] = alpha;
        for i in j + 1..n {
            r[[i, j]] = 0.0;
        }
        if vnorm2 > 0.0 {
            for c in j + 1..k {
                let dot: f64 = (j..n).map(|i| v[i - j] * r[[i, c]]).sum();
                let scale = 2.0 * dot / vnorm2;
                for i in j..n {
                    r[[i, c]] -= scale * v[i - j];
                }
            }
            let dot: f64 = (j..n).map(|i| v[i - j] * qtb[i]).sum();
            let scale = 2.0 * dot / vnorm2;
            for i in j..n {
                qtb[i] -= scale * v[i - j];
            }
        }
        diag[j] = alpha;

        if diag[j].abs() >= rank_tol * diag[0].abs() {
            rank = j + 1;
        } else {
            break;
        }
    }

    // Back-substitution on the retained leading block.
    let mut y = vec![0.0f64; rank];
    for j in (0..rank).rev() {
        let mut s = qtb[j];
        for c in j + 1..rank {
            s -= r[[j, c]] * y[c];
        }
        y[j] = s / r[[j, j]];
    }

    let mut solution = Array1::zeros(k);
    for j in 0..rank {
        solution[perm[j]] = y[j];
    }
    let dropped_columns: Vec<usize> = {
        let mut d: Vec<usize> = perm[rank..].to_vec();
        d.sort_unstable();
        d
    };

    let residual = a.dot(&solution) - b;
    Ok(LsSolution {
        solution,
        residual_norm: norm(&residual),
        effective_rank: rank,
        dropped_columns,
    })
}
