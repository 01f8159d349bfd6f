//! Concrete fixed-point maps: regularized logistic-regression gradient
//! descent, NMF by alternating nonnegative least squares, affine maps,
//! and a smooth quadratic test map with exactly known gamma.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::fixedpoint::FixedPointMap;
use crate::ingest::rng::Rng;
use crate::linalg::{nnls, norm, spectral_norm, LinalgError};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid label {0}; labels must be +1 or -1")]
    InvalidLabel(f64),
    #[error("feature index {index} out of bounds for dimension {d}")]
    IndexOutOfBounds { index: usize, d: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Sparse binary-classification dataset: rows of `(column, value)`
/// pairs with labels in {-1, +1}.
#[derive(Debug, Clone)]
pub struct LogisticDataset {
    rows: Vec<Vec<(usize, f64)>>,
    labels: Vec<f64>,
    d: usize,
}

impl LogisticDataset {
    pub fn new(
        rows: Vec<Vec<(usize, f64)>>,
        labels: Vec<f64>,
        d: usize,
    ) -> Result<Self, ProblemError> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(ProblemError::EmptyDataset);
        }
        for &l in &labels {
            if l != 1.0 && l != -1.0 {
                return Err(ProblemError::InvalidLabel(l));
            }
        }
        for row in &rows {
            for &(c, _) in row {
                if c >= d {
                    return Err(ProblemError::IndexOutOfBounds { index: c, d });
                }
            }
        }
        Ok(Self { rows, labels, d })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Keeps only the selected rows (used for subsampling large inputs).
    pub fn subset(&self, indices: &[usize]) -> Result<Self, ProblemError> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LogisticDataset::new(rows, labels, self.d)
    }

    fn dot_row(&self, i: usize, x: &Array1<f64>) -> f64 {
        self.rows[i].iter().map(|&(c, v)| v * x[c]).sum()
    }
}

/// Gradient-descent map `g(x) = x - eta grad h(x)` for l2-regularized
/// logistic regression
/// `h(x) = (1/n) sum log(1 + exp(-y_i x^T v_i)) + (mu/2)||x||^2`.
pub struct LogisticGdMap {
    data: LogisticDataset,
    mu: f64,
    eta: f64,
    lipschitz: f64,
}

/// Builds the logistic GD map; the gradient Lipschitz constant `L` is
/// estimated by power iteration on the Hessian at `x = 0`, giving
/// `kappa = max(|1 - eta mu|, |1 - eta L|)`.
pub fn logistic_gd_map(
    data: LogisticDataset,
    mu: f64,
    eta: f64,
) -> Result<LogisticGdMap, ProblemError> {
    if !(mu > 0.0) || !(eta > 0.0) {
        return Err(ProblemError::InvalidParameter(format!(
            "mu and eta must be positive, got mu = {mu}, eta = {eta}"
        )));
    }
    let mut map = LogisticGdMap {
        data,
        mu,
        eta,
        lipschitz: 0.0,
    };
    map.lipschitz = map.estimate_lipschitz();
    Ok(map)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticGdMap {
    pub fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        let n = self.data.n() as f64;
        let mut g = self.mu * x;
        for i in 0..self.data.n() {
            let z = self.data.dot_row(i, x);
            let y = self.data.labels[i];
            let w = -y * sigmoid(-y * z) / n;
            for &(c, v) in &self.data.rows[i] {
                g[c] += w * v;
            }
        }
        g
    }

    pub fn hessian_vec(&self, x: &Array1<f64>, v: &Array1<f64>) -> Array1<f64> {
        let n = self.data.n() as f64;
        let mut out = self.mu * v;
        for i in 0..self.data.n() {
            let z = self.data.dot_row(i, x);
            let s = sigmoid(z * self.data.labels[i]);
            let vi_dot_v: f64 = self.data.rows[i].iter().map(|&(c, w)| w * v[c]).sum();
            let coeff = s * (1.0 - s) * vi_dot_v / n;
            for &(c, w) in &self.data.rows[i] {
                out[c] += coeff * w;
            }
        }
        out
    }

    /// Numerically stable objective value.
    pub fn loss(&self, x: &Array1<f64>) -> f64 {
        let n = self.data.n() as f64;
        let mut total = 0.0;
        for i in 0..self.data.n() {
            let z = self.data.labels[i] * self.data.dot_row(i, x);
            // log(1 + exp(-z)) without overflow for large |z|.
            total += (-z).max(0.0) + (-z.abs()).exp().ln_1p();
        }
        total / n + 0.5 * self.mu * x.dot(x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn estimate_lipschitz(&self) -> f64 {
        let d = self.data.d();
        let x0 = Array1::zeros(d);
        let mut v = Array1::from_elem(d, 1.0 / (d as f64).sqrt());
        let mut lambda = self.mu;
        for _ in 0..200 {
            let hv = self.hessian_vec(&x0, &v);
            let nn = norm(&hv);
            if nn == 0.0 {
                break;
            }
            lambda = nn;
            v = hv / nn;
        }
        lambda
    }
}

impl FixedPointMap for LogisticGdMap {
    fn dimension(&self) -> usize {
        self.data.d()
    }

    fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
        x - &(self.eta * &self.gradient(x))
    }

    fn jvp_f(&self, x: &Array1<f64>, v: &Array1<f64>) -> Option<Array1<f64>> {
        Some(-self.eta * &self.hessian_vec(x, v))
    }

    fn kappa(&self) -> Option<f64> {
        let a = (1.0 - self.eta * self.mu).abs();
        let b = (1.0 - self.eta * self.lipschitz).abs();
        Some(a.max(b))
    }
}

/// Affine map `g(x) = Ax + b` with `kappa = ||A||` and `gamma = 0`.
pub struct AffineMap {
    a: Array2<f64>,
    b: Array1<f64>,
    norm_a: f64,
}

pub fn affine_map(a: Array2<f64>, b: Array1<f64>) -> Result<AffineMap, ProblemError> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(ProblemError::InvalidParameter(format!(
            "A is {}x{} with b of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let norm_a = spectral_norm(&a);
    Ok(AffineMap { a, b, norm_a })
}

impl AffineMap {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn offset(&self) -> &Array1<f64> {
        &self.b
    }
}

impl FixedPointMap for AffineMap {
    fn dimension(&self) -> usize {
        self.b.len()
    }

    fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
        self.a.dot(x) + &self.b
    }

    fn jvp_f(&self, _x: &Array1<f64>, v: &Array1<f64>) -> Option<Array1<f64>> {
        Some(self.a.dot(v) - v)
    }

    fn kappa(&self) -> Option<f64> {
        Some(self.norm_a)
    }

    fn gamma(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Smooth test map `g(x) = x - scale (x .* x + M x - c)` over the fixed
/// SPD tridiagonal `M = tridiag(-0.5, 2, -0.5)`, whose eigenvalues lie
/// in (1, 3). The Jacobian difference `g'(x) - g'(y)` is diagonal, so
/// the Jacobian Lipschitz constant is exactly `2 * scale`.
pub struct QuadraticMap {
    m: Array2<f64>,
    c: Array1<f64>,
    scale: f64,
}

pub fn quadratic_map(c: Array1<f64>, scale: f64) -> Result<QuadraticMap, ProblemError> {
    if !(scale > 0.0) {
        return Err(ProblemError::InvalidParameter(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let d = c.len();
    if d == 0 {
        return Err(ProblemError::EmptyDataset);
    }
    let mut m = Array2::zeros((d, d));
    for i in 0..d {
        m[[i, i]] = 2.0;
        if i + 1 < d {
            m[[i, i + 1]] = -0.5;
            m[[i + 1, i]] = -0.5;
        }
    }
    Ok(QuadraticMap { m, c, scale })
}

impl QuadraticMap {
    pub fn dense_jacobian(&self, x: &Array1<f64>) -> Array2<f64> {
        let d = self.c.len();
        let mut j = -self.scale * &self.m;
        for i in 0..d {
            j[[i, i]] -= 2.0 * self.scale * x[i];
        }
        j
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    /// Gershgorin contraction estimate for iterates with
    /// `||x||_inf <= x_bound`: `g'` eigenvalues lie within
    /// `1 - scale * [lambda_min - 2 x_bound, lambda_max + 2 x_bound]`
    /// with `lambda` ranged by Gershgorin discs of `M`.
    pub fn gershgorin_kappa(&self, x_bound: f64) -> f64 {
        let d = self.c.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..d {
            let radius: f64 = (0..d)
                .filter(|&j| j != i)
                .map(|j| self.m[[i, j]].abs())
                .sum();
            lo = lo.min(self.m[[i, i]] - radius);
            hi = hi.max(self.m[[i, i]] + radius);
        }
        let a = (1.0 - self.scale * (lo - 2.0 * x_bound)).abs();
        let b = (1.0 - self.scale * (hi + 2.0 * x_bound)).abs();
        a.max(b)
    }
}

impl FixedPointMap for QuadraticMap {
    fn dimension(&self) -> usize {
        self.c.len()
    }

    fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
        let sq = x.mapv(|v| v * v);
        x - &(self.scale * &(sq + &self.m.dot(x) - &self.c))
    }

    fn jvp_f(&self, x: &Array1<f64>, v: &Array1<f64>) -> Option<Array1<f64>> {
        Some(self.dense_jacobian(x).dot(v))
    }

    fn gamma(&self) -> Option<f64> {
        Some(2.0 * self.scale)
    }
}

/// Nonnegative factor pair for NMF; vectorized as `[vec(W); vec(H)]` in
/// row-major order.
#[derive(Debug, Clone)]
pub struct NmfState {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
}

impl NmfState {
    pub fn to_vector(&self) -> Array1<f64> {
        let mut v = Vec::with_capacity(self.w.len() + self.h.len());
        v.extend(self.w.iter().copied());
        v.extend(self.h.iter().copied());
        Array1::from_vec(v)
    }

    pub fn from_vector(x: &Array1<f64>, d1: usize, d2: usize, r: usize) -> Self {
        let w = Array2::from_shape_vec((d1, r), x.iter().take(d1 * r).copied().collect())
            .expect("vector length matches state shape");
        let h = Array2::from_shape_vec((r, d2), x.iter().skip(d1 * r).copied().collect())
            .expect("vector length matches state shape");
        NmfState { w, h }
    }
}

/// ANNLS fixed-point map over the vectorized `(W, H)` state.
///
/// One evaluation clips the input at zero (this realizes truncation
/// after a mixing step), normalizes W columns to unit 2-norm with the
/// inverse rescaling applied to H rows, then solves the two
/// nonnegative least-squares subproblems `H` then `W`.
pub struct NmfMap {
    a: Array2<f64>,
    r: usize,
    reseeds: AtomicUsize,
    nnls_fallbacks: AtomicUsize,
}

pub fn nmf_annls_map(a: Array2<f64>, r: usize) -> Result<NmfMap, ProblemError> {
    let (d1, d2) = a.dim();
    if r < 1 || r > d1.min(d2) {
        return Err(ProblemError::InvalidParameter(format!(
            "rank {r} out of range for a {d1}x{d2} matrix"
        )));
    }
    if a.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(ProblemError::InvalidParameter(
            "input matrix must be elementwise nonnegative and finite".into(),
        ));
    }
    Ok(NmfMap {
        a,
        r,
        reseeds: AtomicUsize::new(0),
        nnls_fallbacks: AtomicUsize::new(0),
    })
}

impl NmfMap {
    pub fn d1(&self) -> usize {
        self.a.nrows()
    }

    pub fn d2(&self) -> usize {
        self.a.ncols()
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn target(&self) -> &Array2<f64> {
        &self.a
    }

    /// Number of zero W columns that had to be reseeded so far.
    pub fn reseed_count(&self) -> usize {
        self.reseeds.load(Ordering::Relaxed)
    }

    /// Number of NNLS solves that hit the iteration cap and fell back to
    /// their best feasible iterate.
    pub fn nnls_fallback_count(&self) -> usize {
        self.nnls_fallbacks.load(Ordering::Relaxed)
    }

    pub fn relative_residual(&self, state: &NmfState) -> f64 {
        let diff = &self.a - &state.w.dot(&state.h);
        let num: f64 = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let den: f64 = self.a.iter().map(|v| v * v).sum::<f64>().sqrt();
        num / den.max(f64::MIN_POSITIVE)
    }

    fn solve_nnls(&self, mat: &Array2<f64>, rhs: &Array1<f64>) -> Array1<f64> {
        match nnls(mat, rhs) {
            Ok(x) => x,
            Err(LinalgError::NnlsMaxIterations { best, .. }) => {
                self.nnls_fallbacks.fetch_add(1, Ordering::Relaxed);
                best
            }
            Err(_) => Array1::zeros(mat.ncols()),
        }
    }
}

impl FixedPointMap for NmfMap {
    fn dimension(&self) -> usize {
        self.d1() * self.r + self.r * self.d2()
    }

    fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
        let (d1, d2, r) = (self.d1(), self.d2(), self.r);
        let clipped = x.mapv(|v| v.max(0.0));
        let mut st = NmfState::from_vector(&clipped, d1, d2, r);

        for j in 0..r {
            let nj = norm(&st.w.column(j).to_owned());
            if nj == 0.0 {
                // Deterministic reseed keeps g a pure function of x.
                let fill = 1.0 / (d1 as f64).sqrt();
                for i in 0..d1 {
                    st.w[[i, j]] = fill;
                }
                self.reseeds.fetch_add(1, Ordering::Relaxed);
            } else {
                for i in 0..d1 {
                    st.w[[i, j]] /= nj;
                }
                for c in 0..d2 {
                    st.h[[j, c]] *= nj;
                }
            }
        }

        for c in 0..d2 {
            let col = self.solve_nnls(&st.w, &self.a.column(c).to_owned());
            for j in 0..r {
                st.h[[j, c]] = col[j];
            }
        }
        let ht = st.h.t().to_owned();
        for i in 0..d1 {
            let row = self.solve_nnls(&ht, &self.a.row(i).to_owned());
            for j in 0..r {
                st.w[[i, j]] = row[j];
            }
        }
        st.to_vector()
    }
}

/// Synthetic low-rank nonnegative target `A = W H` with factor entries
/// uniform on [0, 1); deterministic per seed.
pub fn make_synthetic_nmf(d1: usize, d2: usize, r: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::from_seed(seed);
    let mut w = Array2::zeros((d1, r));
    for v in w.iter_mut() {
        *v = rng.next_f64();
    }
    let mut h = Array2::zeros((r, d2));
    for v in h.iter_mut() {
        *v = rng.next_f64();
    }
    w.dot(&h)
}

/// Synthetic linearly-separable-ish logistic dataset: dense standard
/// normal features scaled by `1/sqrt(d)`, labels from the sign of a
/// random ground-truth direction. Deterministic per seed.
pub fn make_synthetic_logistic(n: usize, d: usize, seed: u64) -> LogisticDataset {
    let mut rng = Rng::from_seed(seed);
    let w_star: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<(usize, f64)> = (0..d)
            .map(|c| (c, rng.next_gaussian() * scale))
            .collect();
        let z: f64 = row.iter().map(|&(c, v)| v * w_star[c]).sum();
        labels.push(if z >= 0.0 { 1.0 } else { -1.0 });
        rows.push(row);
    }
    LogisticDataset::new(rows, labels, d).expect("synthetic dataset is well-formed")
}
