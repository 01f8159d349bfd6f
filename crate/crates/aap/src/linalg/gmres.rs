use ndarray::Array1;

use super::norm;

/// Relative Arnoldi breakdown threshold (scaled by `||b||`).
const BREAKDOWN_TOL: f64 = 1e-14;

/// GMRES(m) on `A x = b` with zero initial guess, where `A` is given only
/// through its matrix-vector action.
///
/// Returns the minimizer of `||A x - b||` over the Krylov subspace
/// `K_m(A, b)` together with the attained residual norm. Arnoldi uses
/// modified Gram-Schmidt with one reorthogonalization pass; a basis
/// vector with norm below `1e-14 * ||b||` terminates the expansion early
/// and the current minimizer is returned.
pub fn arnoldi_gmres(
    matvec: &dyn Fn(&Array1<f64>) -> Array1<f64>,
    b: &Array1<f64>,
    m: usize,
) -> (Array1<f64>, f64) {
    let d = b.len();
    let beta = norm(b);
    if beta == 0.0 || m == 0 {
        return (Array1::zeros(d), beta);
    }
    let m = m.min(d);

    let mut basis: Vec<Array1<f64>> = vec![b / beta];
    // Hessenberg entries with Givens rotations applied on the fly.
    let mut h_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut cs: Vec<f64> = Vec::with_capacity(m);
    let mut sn: Vec<f64> = Vec::with_capacity(m);
    let mut g = vec![beta];
    let mut steps = 0usize;

    for j in 0..m {
        let mut w = matvec(&basis[j]);
        let mut h = vec![0.0f64; j + 2];
        for i in 0..=j {
            let hij = w.dot(&basis[i]);
            h[i] = hij;
            w.scaled_add(-hij, &basis[i]);
        }
        // One reorthogonalization pass keeps the basis orthogonal to near
        // machine precision, which the gain comparisons rely on.
        for i in 0..=j {
            let corr = w.dot(&basis[i]);
            h[i] += corr;
            w.scaled_add(-corr, &basis[i]);
        }
        let wnorm = norm(&w);
        h[j + 1] = wnorm;

        for i in 0..j {
            let t = cs[i] * h[i] + sn[i] * h[i + 1];
            h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
            h[i] = t;
        }
        let denom = (h[j] * h[j] + h[j + 1] * h[j + 1]).sqrt();
        let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[j] / denom, h[j + 1] / denom) };
        cs.push(c);
        sn.push(s);
        h[j] = c * h[j] + s * h[j + 1];
        h[j + 1] = 0.0;
        g.push(-s * g[j]);
        g[j] *= c;
        h_cols.push(h);
        steps = j + 1;

        if wnorm <= BREAKDOWN_TOL * beta {
            break;
        }
        basis.push(w / wnorm);
    }

    // Back-substitution in the rotated triangular system.
    let mut y = vec![0.0f64; steps];
    for j in (0..steps).rev() {
        let mut s = g[j];
        for c in j + 1..steps {
            s -= h_cols[c][j] * y[c];
        }
        y[j] = s / h_cols[j][j];
    }
    let mut x = Array1::zeros(d);
    for (j, yj) in y.iter().enumerate() {
        x.scaled_add(*yj, &basis[j]);
    }
    (x, g[steps].abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn dense_matvec(a: &Array2<f64>) -> impl Fn(&Array1<f64>) -> Array1<f64> + '_ {
        move |v| a.dot(v)
    }

    #[test]
    fn identity_one_step() {
        let a = Array2::eye(4);
        let b = array![1.0, -2.0, 0.5, 3.0];
        let (x, r) = arnoldi_gmres(&dense_matvec(&a), &b, 1);
        for i in 0..4 {
            assert!((x[i] - b[i]).abs() < 1e-13);
        }
        assert!(r < 1e-13);
    }

    #[test]
    fn exact_after_full_dimension() {
        let a = array![[1.0, 0.0], [0.0, 2.0]];
        let b = array![1.0, 1.0];
        let (x, r) = arnoldi_gmres(&dense_matvec(&a), &b, 2);
        assert!(r < 1e-13);
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs() {
        let a = Array2::eye(3);
        let (x, r) = arnoldi_gmres(&dense_matvec(&a), &Array1::zeros(3), 2);
        assert_eq!(r, 0.0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_krylov_basis_oracle() {
        // Fixed 5x5 SPD matrix; the oracle explicitly builds the Krylov
        // basis [b, Ab, A^2 b] and minimizes over it with the QR path.
        let raw = array![
            [0.6, -0.2, 0.1, 0.4, -0.3],
            [0.3, 0.8, -0.5, 0.2, 0.1],
            [-0.1, 0.4, 0.9, -0.6, 0.2],
            [0.5, -0.3, 0.2, 0.7, -0.4],
            [0.2, 0.1, -0.3, 0.5, 1.0],
        ];
        let a = raw.t().dot(&raw) + Array2::<f64>::eye(5);
        let b = array![1.0, -0.5, 0.25, 0.8, -0.2];
        let m = 3;
        let (_, r) = arnoldi_gmres(&dense_matvec(&a), &b, m);

        let mut basis = Array2::zeros((5, m));
        let mut v = b.clone();
        for j in 0..m {
            for i in 0..5 {
                basis[[i, j]] = v[i];
            }
            v = a.dot(&v);
        }
        let av = a.dot(&basis);
        let sol = crate::linalg::qr_least_squares(&av, &b, 1e-13).unwrap();
        assert!(
            (r - sol.residual_norm).abs() < 1e-10,
            "gmres {} vs oracle {}",
            r,
            sol.residual_norm
        );
    }

    #[test]
    fn residual_nonincreasing_in_m() {
        let a = array![
            [2.0, 1.0, 0.0, 0.0],
            [0.3, 1.5, 0.7, 0.0],
            [0.0, -0.4, 1.8, 0.2],
            [0.1, 0.0, 0.6, 2.5],
        ];
        let b = array![1.0, 2.0, -1.0, 0.5];
        let mut last = f64::INFINITY;
        for m in 1..=4 {
            let (_, r) = arnoldi_gmres(&dense_matvec(&a), &b, m);
            assert!(r <= last + 1e-12, "m={m}: {r} > {last}");
            last = r;
        }
    }
}
