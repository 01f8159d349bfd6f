//! The solver family over a shared fixed-point-map abstraction.
//!
//! A problem is a map `g: R^d -> R^d` with residual `f(x) = g(x) - x`.
//! AAP alternates `m` Picard steps (recorded in a [`SecantHistory`]) with
//! one Anderson mixing step; the same history also yields the
//! multisecant-GMRES direction `p_hat`, residual `r_hat`, and the
//! operator `H` that satisfies `H Y = S`.

mod solvers;

pub use solvers::{
    run_aa, run_aap, run_aap_observed, run_newton_gmres, run_picard, run_res_aa, AapStep,
};

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::linalg::{self, norm, qr_least_squares, LinalgError, DEFAULT_RANK_TOL};

/// A fixed-point problem `x = g(x)`.
///
/// `jvp_f` optionally supplies the action of `f'(x) = g'(x) - I`; solvers
/// fall back to central finite differences when it returns `None`. `kappa`
/// and `gamma` are the contraction constant of `g` and the Lipschitz
/// constant of `g'`, used only by diagnostics.
pub trait FixedPointMap {
    fn dimension(&self) -> usize;

    fn eval_g(&self, x: &Array1<f64>) -> Array1<f64>;

    fn jvp_f(&self, _x: &Array1<f64>, _v: &Array1<f64>) -> Option<Array1<f64>> {
        None
    }

    fn kappa(&self) -> Option<f64> {
        None
    }

    fn gamma(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Error)]
pub enum FixedPointError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical breakdown: non-finite values produced by g")]
    Breakdown,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One Picard sweep: iterates `x^0..x^m` and residuals `f^0..f^m`.
///
/// The secant matrix `S` is, column for column, the first `m` residual
/// columns (the sweep guarantees `s^l = x^{l+1} - x^l = f^l` bitwise),
/// and `Y` column `l` is residual column `l+1` minus column `l`.
#[derive(Debug, Clone)]
pub struct SecantHistory {
    iterates: Array2<f64>,
    residuals: Array2<f64>,
}

impl SecantHistory {
    /// Builds a history from explicit iterate and residual columns; both
    /// must be `d x (m+1)` with `m >= 1`.
    pub fn from_parts(
        iterates: Array2<f64>,
        residuals: Array2<f64>,
    ) -> Result<Self, FixedPointError> {
        if iterates.dim() != residuals.dim() {
            return Err(FixedPointError::DimensionMismatch(format!(
                "iterates {:?} vs residuals {:?}",
                iterates.dim(),
                residuals.dim()
            )));
        }
        if iterates.ncols() < 2 {
            return Err(FixedPointError::InvalidConfig(
                "history needs at least two columns (m >= 1)".into(),
            ));
        }
        Ok(Self {
            iterates,
            residuals,
        })
    }

    /// Number of Picard steps `m` in the sweep.
    pub fn window(&self) -> usize {
        self.residuals.ncols() - 1
    }

    pub fn dimension(&self) -> usize {
        self.residuals.nrows()
    }

    /// Iterate columns `x^0..x^m`, `d x (m+1)`.
    pub fn iterates(&self) -> &Array2<f64> {
        &self.iterates
    }

    /// Residual columns `f^0..f^m`, `d x (m+1)`.
    pub fn residuals(&self) -> &Array2<f64> {
        &self.residuals
    }

    /// Sweep-start residual `f^0 = f_t`.
    pub fn f0(&self) -> Array1<f64> {
        self.residuals.column(0).to_owned()
    }

    /// `S = [s^0..s^{m-1}]`; identical to the first `m` residual columns.
    pub fn s_matrix(&self) -> Array2<f64> {
        let m = self.window();
        self.residuals.slice(ndarray::s![.., ..m]).to_owned()
    }

    /// `Y = [y^0..y^{m-1}]` with `y^l = f^{l+1} - f^l`.
    pub fn y_matrix(&self) -> Array2<f64> {
        let (d, m) = (self.dimension(), self.window());
        let mut y = Array2::zeros((d, m));
        for l in 0..m {
            for i in 0..d {
                y[[i, l]] = self.residuals[[i, l + 1]] - self.residuals[[i, l]];
            }
        }
        y
    }

    /// `sum_l alpha^l x^l` for a coefficient vector of length `m+1`.
    pub fn mix_iterates(&self, alpha: &Array1<f64>) -> Array1<f64> {
        self.iterates.dot(alpha)
    }

    /// `sum_l alpha^l f^l` for a coefficient vector of length `m+1`.
    pub fn mix_residuals(&self, alpha: &Array1<f64>) -> Array1<f64> {
        self.residuals.dot(alpha)
    }
}

/// Damping ratio `beta_t >= 0`, constant or per-iteration.
#[derive(Clone)]
pub enum DampingSchedule {
    Constant(f64),
    Schedule(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl DampingSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            DampingSchedule::Constant(b) => *b,
            DampingSchedule::Schedule(f) => f(t),
        }
    }
}

impl fmt::Debug for DampingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DampingSchedule::Constant(b) => write!(f, "Constant({b})"),
            DampingSchedule::Schedule(_) => write!(f, "Schedule(..)"),
        }
    }
}

impl Default for DampingSchedule {
    fn default() -> Self {
        DampingSchedule::Constant(1.0)
    }
}

/// Shared solver configuration.
///
/// `m` is the sweep length (AAP), window size (AA/resAA), or Krylov depth
/// (Newton-GMRES). Stopping tests `||f_t|| <= tol`, against `||f_0||`-scaled
/// tolerance when `relative_tol` is set, and is checked after every g
/// evaluation so g-evaluation counts are comparable across solvers.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub m: usize,
    pub beta: DampingSchedule,
    pub tol: f64,
    pub relative_tol: bool,
    pub max_global_iters: usize,
    /// Optional budget on g evaluations; the run stops with `MaxIters`
    /// when the next evaluation would exceed it.
    pub max_g_evals: Option<usize>,
    pub rank_tol: f64,
    /// Scale for the finite-difference Jacobian-vector fallback.
    pub jvp_fd_step: f64,
}

impl SolverConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            beta: DampingSchedule::default(),
            tol: 1e-10,
            relative_tol: false,
            max_global_iters: 500,
            max_g_evals: None,
            rank_tol: DEFAULT_RANK_TOL,
            jvp_fd_step: f64::EPSILON.sqrt(),
        }
    }

    pub(crate) fn validate(&self, d: usize) -> Result<(), FixedPointError> {
        if self.m < 1 || self.m > d {
            return Err(FixedPointError::InvalidConfig(format!(
                "m must satisfy 1 <= m <= d = {d}, got {}",
                self.m
            )));
        }
        if !(self.tol > 0.0) {
            return Err(FixedPointError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if let DampingSchedule::Constant(b) = self.beta {
            if !(b >= 0.0) {
                return Err(FixedPointError::InvalidConfig(format!(
                    "beta must be >= 0, got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-iteration solver state snapshot.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub t: usize,
    /// Iterate at the start of the step.
    pub x: Array1<f64>,
    /// `||f_t||` at that iterate.
    pub residual_norm: f64,
    /// Optimization gain `theta_t` (mixing steps only).
    pub theta: Option<f64>,
    /// Mixing coefficients, summing to 1 (mixing steps only).
    pub alpha: Option<Array1<f64>>,
    pub g_evals_cumulative: usize,
    /// `||f^0||..` for the Picard substeps of an AAP sweep; empty for
    /// solvers without sweeps.
    pub sweep_residual_norms: Vec<f64>,
    /// Set when the mixing least squares dropped dependent Y columns.
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    NumericalBreakdown,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub records: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub final_x: Array1<f64>,
    /// `||f||` at `final_x` when known, else the last observed norm.
    pub final_residual_norm: f64,
    pub g_evals: usize,
}

/// Output of the constrained mixing solve.
#[derive(Debug, Clone)]
pub struct MixingSolution {
    /// Affine coefficients over `x^0..x^m`, length `m+1`, summing to 1.
    pub alpha: Array1<f64>,
    /// Unconstrained least-squares solution of `min ||Y z - f_t||`.
    pub z: Array1<f64>,
    /// Optimization gain `theta = ||Y z - f_t|| / ||f_t||` in [0, 1].
    pub theta: f64,
    /// `||sum_l alpha^l f^l|| = theta * ||f_t||`.
    pub mixed_residual_norm: f64,
    pub rank_deficient: bool,
}

/// Runs `m` Picard steps from `x_t`, recording iterates and residuals.
///
/// Costs `m + 1` g evaluations: one per step plus one more for `f^m` at
/// the last point.
pub fn picard_sweep(
    map: &dyn FixedPointMap,
    x_t: &Array1<f64>,
    m: usize,
) -> Result<SecantHistory, FixedPointError> {
    if m < 1 {
        return Err(FixedPointError::InvalidConfig(
            "picard_sweep needs m >= 1".into(),
        ));
    }
    let d = map.dimension();
    if x_t.len() != d {
        return Err(FixedPointError::DimensionMismatch(format!(
            "x has length {} but the map has dimension {d}",
            x_t.len()
        )));
    }
    let mut iterates = Array2::zeros((d, m + 1));
    let mut residuals = Array2::zeros((d, m + 1));
    let mut x = x_t.clone();
    for l in 0..=m {
        let gx = map.eval_g(&x);
        if !gx.iter().all(|v| v.is_finite()) {
            return Err(FixedPointError::Breakdown);
        }
        for i in 0..d {
            iterates[[i, l]] = x[i];
            residuals[[i, l]] = gx[i] - x[i];
        }
        if l < m {
            x = gx;
        }
    }
    SecantHistory::from_parts(iterates, residuals)
}

/// Solves the constrained mixing problem `min ||sum_l alpha^l f^l||`
/// subject to `sum alpha = 1` via the unconstrained form
/// `min ||Y z - f_t||`, recovering `alpha` from `z`.
///
/// Dependent `Y` columns are dropped by the pivoted-QR rank filter; their
/// `z` entries stay zero and the recovery still sums to 1. A zero `f_t`
/// short-circuits to `alpha = e_0`, `theta = 0`.
pub fn solve_mixing(
    history: &SecantHistory,
    rank_tol: f64,
) -> Result<MixingSolution, FixedPointError> {
    let m = history.window();
    let f0 = history.f0();
    let f_norm = norm(&f0);
    if f_norm == 0.0 {
        let mut alpha = Array1::zeros(m + 1);
        alpha[0] = 1.0;
        return Ok(MixingSolution {
            alpha,
            z: Array1::zeros(m),
            theta: 0.0,
            mixed_residual_norm: 0.0,
            rank_deficient: false,
        });
    }
    let y = history.y_matrix();
    let ls = qr_least_squares(&y, &f0, rank_tol)?;
    let z = ls.solution;
    let mut alpha = Array1::zeros(m + 1);
    alpha[0] = 1.0 + z[0];
    for l in 1..m {
        alpha[l] = z[l] - z[l - 1];
    }
    alpha[m] = -z[m - 1];
    Ok(MixingSolution {
        alpha,
        z,
        theta: ls.residual_norm / f_norm,
        mixed_residual_norm: ls.residual_norm,
        rank_deficient: ls.effective_rank < m,
    })
}

/// One full AAP global step: Picard sweep, mixing, damped update
/// `x_next = sum_l alpha^l x^l + beta * sum_l alpha^l f^l`.
pub fn aap_global_step(
    map: &dyn FixedPointMap,
    x_t: &Array1<f64>,
    cfg: &SolverConfig,
) -> Result<(Array1<f64>, IterationRecord), FixedPointError> {
    cfg.validate(map.dimension())?;
    let history = picard_sweep(map, x_t, cfg.m)?;
    let mixing = solve_mixing(&history, cfg.rank_tol)?;
    let beta = cfg.beta.at(0);
    let x_next =
        history.mix_iterates(&mixing.alpha) + beta * &history.mix_residuals(&mixing.alpha);
    let sweep_residual_norms = (0..=cfg.m)
        .map(|l| norm(&history.residuals().column(l).to_owned()))
        .collect::<Vec<_>>();
    let record = IterationRecord {
        t: 0,
        x: x_t.clone(),
        residual_norm: sweep_residual_norms[0],
        theta: Some(mixing.theta),
        alpha: Some(mixing.alpha),
        g_evals_cumulative: cfg.m + 1,
        sweep_residual_norms,
        rank_deficient: mixing.rank_deficient,
    };
    Ok((x_next, record))
}

/// Multisecant-GMRES direction and residual: `p_hat = S z`,
/// `r_hat = Y z - f_t` with `z = argmin ||Y z - f_t||`.
///
/// The AAP update is recovered as `x_next = x_t - p_hat - beta * r_hat`.
pub fn multisecant_direction(
    history: &SecantHistory,
    rank_tol: f64,
) -> Result<(Array1<f64>, Array1<f64>), FixedPointError> {
    let mixing = solve_mixing(history, rank_tol)?;
    let s = history.s_matrix();
    let y = history.y_matrix();
    let p_hat = s.dot(&mixing.z);
    let r_hat = y.dot(&mixing.z) - history.f0();
    Ok((p_hat, r_hat))
}

/// Applies the multisecant operator
/// `H v = -beta v + (S + beta Y)(Y^T Y)^{-1} Y^T v`, evaluated through a
/// rank-filtered least squares rather than an explicit inverse. Satisfies
/// `H y^l = s^l` for every secant pair.
pub fn apply_h(
    history: &SecantHistory,
    beta: f64,
    v: &Array1<f64>,
    rank_tol: f64,
) -> Result<Array1<f64>, FixedPointError> {
    if v.len() != history.dimension() {
        return Err(FixedPointError::DimensionMismatch(format!(
            "v has length {} but the history has dimension {}",
            v.len(),
            history.dimension()
        )));
    }
    let y = history.y_matrix();
    let s = history.s_matrix();
    let zv = qr_least_squares(&y, v, rank_tol)?.solution;
    let mut out = s.dot(&zv) + beta * &y.dot(&zv);
    out.scaled_add(-beta, v);
    Ok(out)
}

/// `1 / sigma_min(B)`, the induced 2-norm of `B^{-1}` for invertible `B`;
/// infinity when `B` is singular to working precision.
pub fn spectral_inverse_norm(b: &Array2<f64>) -> f64 {
    let sv = linalg::singular_values(b);
    let smin = sv[sv.len() - 1];
    if smin == 0.0 {
        f64::INFINITY
    } else {
        1.0 / smin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) struct Scale(pub f64);

    impl FixedPointMap for Scale {
        fn dimension(&self) -> usize {
            1
        }
        fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
            self.0 * x
        }
    }

    pub(crate) struct Identity(pub usize);

    impl FixedPointMap for Identity {
        fn dimension(&self) -> usize {
            self.0
        }
        fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
            x.clone()
        }
    }

    pub(crate) struct Affine {
        pub a: Array2<f64>,
        pub b: Array1<f64>,
    }

    impl FixedPointMap for Affine {
        fn dimension(&self) -> usize {
            self.b.len()
        }
        fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
            self.a.dot(x) + &self.b
        }
    }

    /// Smooth nonlinear contraction used for cross-checks.
    pub(crate) struct Quadratic {
        pub m: Array2<f64>,
        pub c: Array1<f64>,
        pub scale: f64,
    }

    impl FixedPointMap for Quadratic {
        fn dimension(&self) -> usize {
            self.c.len()
        }
        fn eval_g(&self, x: &Array1<f64>) -> Array1<f64> {
            let sq = x.mapv(|v| v * v);
            x - &(self.scale * &(sq + &self.m.dot(x) - &self.c))
        }
    }

    /// Deterministic test-vector generator (an LCG; statistical quality
    /// is irrelevant here).
    pub(crate) fn pseudo_vec(n: usize, seed: u64) -> Array1<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Array1::from_iter((0..n).map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        }))
    }

    fn quad6() -> Quadratic {
        let mut m = Array2::eye(6);
        for i in 0..6 {
            m[[i, i]] = 1.0 + 0.2 * i as f64;
            if i + 1 < 6 {
                m[[i, i + 1]] = 0.3;
                m[[i + 1, i]] = 0.3;
            }
        }
        Quadratic {
            m,
            c: pseudo_vec(6, 9),
            scale: 0.3,
        }
    }

    #[test]
    fn sweep_scalar_geometric() {
        let h = picard_sweep(&Scale(0.5), &array![1.0], 2).unwrap();
        let r = h.residuals();
        assert_eq!(r[[0, 0]], -0.5);
        assert_eq!(r[[0, 1]], -0.25);
        assert_eq!(r[[0, 2]], -0.125);
        let s = h.s_matrix();
        assert_eq!(s[[0, 0]], -0.5);
        assert_eq!(s[[0, 1]], -0.25);
        let y = h.y_matrix();
        assert_eq!(y[[0, 0]], 0.25);
        assert_eq!(y[[0, 1]], 0.125);
    }

    #[test]
    fn sweep_identity_zero_residuals() {
        let h = picard_sweep(&Identity(3), &pseudo_vec(3, 1), 2).unwrap();
        assert!(h.residuals().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sweep_s_columns_are_residual_columns() {
        let h = picard_sweep(&quad6(), &pseudo_vec(6, 2), 3).unwrap();
        let s = h.s_matrix();
        for l in 0..3 {
            for i in 0..6 {
                assert_eq!(s[[i, l]], h.residuals()[[i, l]]);
                // s^l also equals the iterate difference bitwise.
                assert_eq!(s[[i, l]], h.iterates()[[i, l + 1]] - h.iterates()[[i, l]]);
            }
        }
    }

    #[test]
    fn sweep_linear_matches_matrix_power_oracle() {
        // For g(x) = Ax + b the sweep residuals obey f^{l+1} = A f^l.
        let a = 0.1 * &pseudo_mat(4, 4, 7) + 0.5 * &Array2::<f64>::eye(4);
        let map = Affine {
            a: a.clone(),
            b: pseudo_vec(4, 8),
        };
        let h = picard_sweep(&map, &pseudo_vec(4, 3), 3).unwrap();
        let mut f = h.f0();
        for l in 1..=3 {
            f = a.dot(&f);
            for i in 0..4 {
                assert!((h.residuals()[[i, l]] - f[i]).abs() < 1e-12);
            }
        }
    }

    pub(crate) fn pseudo_mat(n: usize, k: usize, seed: u64) -> Array2<f64> {
        let v = pseudo_vec(n * k, seed);
        Array2::from_shape_vec((n, k), v.to_vec()).unwrap()
    }

    #[test]
    fn sweep_contraction_lemma_bounds() {
        // kappa < 1 map: substep residuals never exceed the sweep-start
        // residual and iterates stay within l * ||f_t|| of x_t.
        let map = Scale(0.8);
        let h = picard_sweep(&map, &array![2.0], 4).unwrap();
        let f0 = h.residuals()[[0, 0]].abs();
        for l in 0..=4 {
            assert!(h.residuals()[[0, l]].abs() <= f0 * (1.0 + 1e-10));
            let dx = (h.iterates()[[0, l]] - h.iterates()[[0, 0]]).abs();
            assert!(dx <= l as f64 * f0 * (1.0 + 1e-10));
        }
    }

    #[test]
    fn mixing_symmetry_case() {
        let iterates = array![[0.0, 1.0], [0.0, 0.0]];
        let residuals = array![[1.0, 0.0], [0.0, 1.0]];
        let h = SecantHistory::from_parts(iterates, residuals).unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        assert!((mix.alpha[0] - 0.5).abs() < 1e-12);
        assert!((mix.alpha[1] - 0.5).abs() < 1e-12);
        assert!((mix.theta - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mixing_stagnant_residual() {
        let iterates = array![[0.0, 1.0], [0.0, 0.0]];
        let residuals = array![[1.0, 1.0], [1.0, 1.0]];
        let h = SecantHistory::from_parts(iterates, residuals).unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        assert!(mix.rank_deficient);
        assert_eq!(mix.alpha[0], 1.0);
        assert_eq!(mix.alpha[1], 0.0);
        assert!((mix.theta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixing_zero_residual() {
        let iterates = pseudo_mat(3, 3, 4);
        let residuals = Array2::zeros((3, 3));
        let h = SecantHistory::from_parts(iterates, residuals).unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        assert_eq!(mix.alpha[0], 1.0);
        assert_eq!(mix.theta, 0.0);
    }

    #[test]
    fn mixing_alpha_sums_to_one_and_matches_z() {
        let h = picard_sweep(&quad6(), &pseudo_vec(6, 5), 3).unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        let sum: f64 = mix.alpha.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        // theta equals the alpha-form residual ratio.
        let mixed = h.mix_residuals(&mix.alpha);
        let ratio = norm(&mixed) / norm(&h.f0());
        assert!((ratio - mix.theta).abs() < 1e-10);
        assert!(mix.theta >= 0.0 && mix.theta <= 1.0 + 1e-10);
    }

    #[test]
    fn mixing_beats_affine_grid_oracle() {
        // Brute force over affine combinations near the computed optimum:
        // no grid point may achieve a smaller mixed residual.
        let h = picard_sweep(
            &Quadratic {
                m: Array2::<f64>::eye(8) + 0.1 * &pseudo_mat(8, 8, 11),
                c: pseudo_vec(8, 12),
                scale: 0.25,
            },
            &pseudo_vec(8, 13),
            3,
        )
        .unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        let best = mix.mixed_residual_norm;
        let n = 40;
        let width = 0.5;
        let mut grid_best = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let a1 = mix.alpha[1] + width * (2.0 * i as f64 / (n - 1) as f64 - 1.0);
                    let a2 = mix.alpha[2] + width * (2.0 * j as f64 / (n - 1) as f64 - 1.0);
                    let a3 = mix.alpha[3] + width * (2.0 * k as f64 / (n - 1) as f64 - 1.0);
                    let alpha = array![1.0 - a1 - a2 - a3, a1, a2, a3];
                    let r = norm(&h.mix_residuals(&alpha));
                    if r < grid_best {
                        grid_best = r;
                    }
                }
            }
        }
        assert!(best <= grid_best + 1e-6, "{best} vs grid {grid_best}");
    }

    #[test]
    fn aap_step_scalar_exact_fixed_point() {
        // m = 1 on g(x) = ax drives the iterate to the fixed point 0 in
        // one step; the scalar LS has the closed form z = 1/(a - 1).
        let cfg = SolverConfig::new(1);
        let (x_next, rec) = aap_global_step(&Scale(0.7), &array![1.0], &cfg).unwrap();
        assert!(x_next[0].abs() < 1e-12);
        let a = rec.alpha.unwrap();
        assert!((a[0] - 0.7 / (0.7 - 1.0) as f64).abs() < 1e-12);
        assert!((a[0] + a[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aap_step_identity_is_noop() {
        let cfg = SolverConfig::new(2);
        let x = pseudo_vec(4, 6);
        let (x_next, rec) = aap_global_step(&Identity(4), &x, &cfg).unwrap();
        for i in 0..4 {
            assert_eq!(x_next[i], x[i]);
        }
        assert_eq!(rec.residual_norm, 0.0);
        assert_eq!(rec.g_evals_cumulative, 3);
    }

    #[test]
    fn aap_step_linear_matches_gmres_iterate() {
        // For affine g the mixed point equals the GMRES(m) iterate for
        // (I - A)x = b started at x_t, and x_next = g(mixed point).
        let a = 0.15 * &pseudo_mat(10, 10, 21) + 0.4 * &Array2::<f64>::eye(10);
        let b = pseudo_vec(10, 22);
        let map = Affine {
            a: a.clone(),
            b: b.clone(),
        };
        let x_t = pseudo_vec(10, 23);
        let m = 4;
        let cfg = SolverConfig::new(m);
        let history = picard_sweep(&map, &x_t, m).unwrap();
        let mix = solve_mixing(&history, 1e-12).unwrap();
        let mixed = history.mix_iterates(&mix.alpha);

        let i_minus_a = Array2::eye(10) - &a;
        let f_t = map.eval_g(&x_t) - &x_t;
        let (delta, _) =
            crate::linalg::arnoldi_gmres(&|v: &Array1<f64>| i_minus_a.dot(v), &f_t, m);
        let gmres_iter = &x_t + &delta;
        for i in 0..10 {
            assert!(
                (mixed[i] - gmres_iter[i]).abs() < 1e-9,
                "{} vs {}",
                mixed[i],
                gmres_iter[i]
            );
        }
        let (x_next, _) = aap_global_step(&map, &x_t, &cfg).unwrap();
        let g_mixed = map.eval_g(&gmres_iter);
        for i in 0..10 {
            assert!((x_next[i] - g_mixed[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn direction_reproduces_mixing_and_update() {
        let map = quad6();
        let x_t = pseudo_vec(6, 31);
        let h = picard_sweep(&map, &x_t, 3).unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        let (p_hat, r_hat) = multisecant_direction(&h, 1e-12).unwrap();
        // x_t - p_hat is the mixed point.
        let mixed = h.mix_iterates(&mix.alpha);
        for i in 0..6 {
            assert!((x_t[i] - p_hat[i] - mixed[i]).abs() < 1e-12);
        }
        // Update identity for a damped step.
        let mut cfg = SolverConfig::new(3);
        cfg.beta = DampingSchedule::Constant(0.6);
        let (x_next, _) = aap_global_step(&map, &x_t, &cfg).unwrap();
        let scale = 1.0 + norm(&x_t);
        for i in 0..6 {
            let rebuilt = x_t[i] - p_hat[i] - 0.6 * r_hat[i];
            assert!((x_next[i] - rebuilt).abs() < 1e-12 * scale);
        }
        // ||r_hat|| = theta * ||f_t||.
        assert!((norm(&r_hat) - mix.mixed_residual_norm).abs() < 1e-10);
    }

    #[test]
    fn direction_exact_when_f_in_span() {
        let iterates = pseudo_mat(3, 3, 41);
        let mut residuals = Array2::zeros((3, 3));
        // y^0 = (1,0,0), y^1 = (0,1,0); f^0 = combination of both.
        residuals[[0, 0]] = 2.0;
        residuals[[1, 0]] = -1.0;
        residuals[[0, 1]] = 3.0;
        residuals[[1, 1]] = -1.0;
        residuals[[0, 2]] = 3.0;
        residuals[[1, 2]] = 0.0;
        let h = SecantHistory::from_parts(iterates, residuals).unwrap();
        let (_, r_hat) = multisecant_direction(&h, 1e-12).unwrap();
        assert!(norm(&r_hat) < 1e-12);
        let mix = solve_mixing(&h, 1e-12).unwrap();
        assert!(mix.theta < 1e-12);
    }

    #[test]
    fn three_problem_equivalence_and_orthogonality() {
        let h = picard_sweep(&quad6(), &pseudo_vec(6, 51), 3).unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        let (p_hat, r_hat) = multisecant_direction(&h, 1e-12).unwrap();
        let f0 = h.f0();
        let s = h.s_matrix();
        let y = h.y_matrix();

        let mixed_norm = norm(&h.mix_residuals(&mix.alpha));
        let ls_norm = norm(&(y.dot(&mix.z) - &f0));
        // B p_hat for B = Y S^dagger: w = S^dagger p_hat, then Y w.
        let w = qr_least_squares(&s, &p_hat, 1e-12).unwrap().solution;
        let bp = y.dot(&w);
        let b_norm = norm(&(&bp - &f0));
        assert!((mixed_norm - ls_norm).abs() < 1e-10);
        assert!((b_norm - ls_norm).abs() < 1e-10);
        // Galerkin orthogonality of the multisecant-GMRES residual.
        let ip = bp.dot(&r_hat).abs();
        assert!(ip < 1e-10 * (norm(&bp) * norm(&r_hat)).max(1.0));
    }

    #[test]
    fn direction_norm_bound_full_window() {
        // m = d: S is square and generically invertible, so the
        // completion B = -I + (Y + S) S^{-1} needs no extension and
        // ||p_hat|| <= sqrt(1 - theta^2) ||B^{-1}|| ||f_t|| applies.
        let a = 0.2 * &pseudo_mat(5, 5, 61) + 0.5 * &Array2::<f64>::eye(5);
        let map = Affine {
            a,
            b: pseudo_vec(5, 62),
        };
        let h = picard_sweep(&map, &pseudo_vec(5, 63), 5).unwrap();
        let mix = solve_mixing(&h, 1e-12).unwrap();
        let (p_hat, _) = multisecant_direction(&h, 1e-12).unwrap();
        let s = h.s_matrix();
        let y = h.y_matrix();
        let mut s_inv = Array2::zeros((5, 5));
        for j in 0..5 {
            let mut e = Array1::zeros(5);
            e[j] = 1.0;
            let col = qr_least_squares(&s, &e, 1e-12).unwrap().solution;
            for i in 0..5 {
                s_inv[[i, j]] = col[i];
            }
        }
        let b_mat = (&y + &s).dot(&s_inv) - &Array2::<f64>::eye(5);
        let b_inv_norm = spectral_inverse_norm(&b_mat);
        let theta2 = (mix.theta * mix.theta).min(1.0);
        let bound = (1.0 - theta2).sqrt() * b_inv_norm * norm(&h.f0());
        assert!(norm(&p_hat) <= bound * (1.0 + 1e-8), "{} vs {}", norm(&p_hat), bound);
    }

    #[test]
    fn apply_h_multisecant_equation() {
        let h = picard_sweep(&quad6(), &pseudo_vec(6, 71), 3).unwrap();
        let y = h.y_matrix();
        let s = h.s_matrix();
        for l in 0..3 {
            let out = apply_h(&h, 0.8, &y.column(l).to_owned(), 1e-12).unwrap();
            for i in 0..6 {
                assert!((out[i] - s[[i, l]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn apply_h_kernel_orthogonal_input() {
        // v orthogonal to span(Y) with beta = 0 maps to zero.
        let iterates = pseudo_mat(3, 2, 81);
        let residuals = array![[1.0, 2.0], [0.0, 0.0], [0.5, 0.5]];
        let h = SecantHistory::from_parts(iterates, residuals).unwrap();
        // Y = (1, 0, 0); take v = (0, 1, 0).
        let v = array![0.0, 1.0, 0.0];
        let out = apply_h(&h, 0.0, &v, 1e-12).unwrap();
        assert!(norm(&out) < 1e-14);
    }

    #[test]
    fn apply_h_matches_normal_equations_oracle() {
        let h = picard_sweep(&quad6(), &pseudo_vec(6, 91), 3).unwrap();
        let y = h.y_matrix();
        let s = h.s_matrix();
        let v = pseudo_vec(6, 92);
        let beta = 0.5;
        let out = apply_h(&h, beta, &v, 1e-12).unwrap();
        // Dense oracle: explicitly invert the 3x3 Gram matrix.
        let gram = y.t().dot(&y);
        let rhs = y.t().dot(&v);
        let mut g = [[0.0f64; 3]; 3];
        let mut r = [0.0f64; 3];
        for i in 0..3 {
            r[i] = rhs[i];
            for j in 0..3 {
                g[i][j] = gram[[i, j]];
            }
        }
        let zv = solve3(g, r);
        let zv = array![zv[0], zv[1], zv[2]];
        let expect = (&s + &(beta * &y)).dot(&zv) - beta * &v;
        for i in 0..6 {
            assert!((out[i] - expect[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn apply_h_reproduces_aap_step() {
        let map = quad6();
        let x_t = pseudo_vec(6, 95);
        let mut cfg = SolverConfig::new(3);
        cfg.beta = DampingSchedule::Constant(0.9);
        let h = picard_sweep(&map, &x_t, 3).unwrap();
        let hv = apply_h(&h, 0.9, &h.f0(), 1e-12).unwrap();
        let (x_next, _) = aap_global_step(&map, &x_t, &cfg).unwrap();
        for i in 0..6 {
            assert!((x_t[i] - hv[i] - x_next[i]).abs() < 1e-10);
        }
    }

    fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
        let mut a = m;
        let mut b = b;
        for j in 0..3 {
            let p = (j..3)
                .max_by(|&x, &y| a[x][j].abs().total_cmp(&a[y][j].abs()))
                .unwrap();
            a.swap(j, p);
            b.swap(j, p);
            for i in j + 1..3 {
                let f = a[i][j] / a[j][j];
                for c in j..3 {
                    a[i][c] -= f * a[j][c];
                }
                b[i] -= f * b[j];
            }
        }
        let mut x = [0.0; 3];
        for j in (0..3).rev() {
            let mut s = b[j];
            for c in j + 1..3 {
                s -= a[j][c] * x[c];
            }
            x[j] = s / a[j][j];
        }
        x
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0).validate(4).is_err());
        assert!(SolverConfig::new(5).validate(4).is_err());
        let mut cfg = SolverConfig::new(2);
        cfg.tol = 0.0;
        assert!(cfg.validate(4).is_err());
        cfg.tol = 1e-8;
        cfg.beta = DampingSchedule::Constant(-0.1);
        assert!(cfg.validate(4).is_err());
    }

    #[test]
    fn sweep_breakdown_on_nonfinite() {
        struct Bad;
        impl FixedPointMap for Bad {
            fn dimension(&self) -> usize {
                1
            }
            fn eval_g(&self, _x: &Array1<f64>) -> Array1<f64> {
                array![f64::NAN]
            }
        }
        assert!(matches!(
            picard_sweep(&Bad, &array![1.0], 2),
            Err(FixedPointError::Breakdown)
        ));
    }
}
