use ndarray::{Array1, Array2};

use super::{qr_least_squares, LinalgError};

/// Relative KKT tolerance, scaled by `||A^T b||`.
const KKT_REL_TOL: f64 = 1e-8;

/// Lawson-Hanson active-set solve of `min ||A x - b||` subject to `x >= 0`.
///
/// At the returned point, active coordinates (`x_i = 0`) have gradient
/// `(A^T (A x - b))_i >= -tol` and free coordinates have `|gradient_i| <= tol`
/// with `tol = 1e-8 * ||A^T b||`.
pub fn nnls(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
    let (n, k) = (a.nrows(), a.ncols());
    if n != b.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "A has {} rows but b has length {}",
            n,
            b.len()
        )));
    }
    if k == 0 {
        return Ok(Array1::zeros(0));
    }

    let atb = a.t().dot(b);
    let grad_tol = KKT_REL_TOL * atb.dot(&atb).sqrt();
    let max_iters = 3 * k.max(2);

    let mut x = Array1::<f64>::zeros(k);
    let mut passive = vec![false; k];
    let mut iterations = 0usize;

    loop {
        // w = A^T (b - A x): positive entries on the active set signal
        // coordinates that should enter the passive set.
        let w = a.t().dot(&(b - &a.dot(&x)));
        let mut best: Option<usize> = None;
        let mut best_w = grad_tol.max(f64::MIN_POSITIVE);
        for i in 0..k {
            if !passive[i] && w[i] > best_w {
                best_w = w[i];
                best = Some(i);
            }
        }
        let Some(enter) = best else {
            return Ok(x);
        };
        passive[enter] = true;
        iterations += 1;
        if iterations > max_iters {
            return Err(LinalgError::NnlsMaxIterations { iterations, best: x });
        }

        loop {
            let cols: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let mut ap = Array2::<f64>::zeros((n, cols.len()));
            for (j, &c) in cols.iter().enumerate() {
                for i in 0..n {
                    ap[[i, j]] = a[[i, c]];
                }
            }
            let z = qr_least_squares(&ap, b, 1e-13)?.solution;

            if z.iter().all(|&v| v > 0.0) {
                for (j, &c) in cols.iter().enumerate() {
                    x[c] = z[j];
                }
                for i in 0..k {
                    if !passive[i] {
                        x[i] = 0.0;
                    }
                }
                break;
            }

            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            for (j, &c) in cols.iter().enumerate() {
                if z[j] <= 0.0 {
                    let t = x[c] / (x[c] - z[j]);
                    if t < alpha {
                        alpha = t;
                    }
                }
            }
            for (j, &c) in cols.iter().enumerate() {
                x[c] += alpha * (z[j] - x[c]);
            }
            for (j, &c) in cols.iter().enumerate() {
                if z[j] <= 0.0 && x[c] <= 1e-14 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            iterations += 1;
            if iterations > max_iters {
                return Err(LinalgError::NnlsMaxIterations { iterations, best: x });
            }
        }
    }
}
