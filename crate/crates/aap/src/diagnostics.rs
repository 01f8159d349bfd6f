//! Per-iteration theory instrumentation: optimization gain, multisecant
//! error, Jacobian-GMRES gain, Krylov matrix conditioning, and the
//! bounds relating them.
//!
//! Everything here is a pure computation over a [`SecantHistory`]
//! snapshot plus some form of Jacobian access; nothing mutates solver
//! state, so records can be computed from a `run_aap_observed` hook.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::fixedpoint::{FixedPointError, FixedPointMap, SecantHistory};
use crate::linalg::{
    arnoldi_gmres, condition_number, norm, qr_least_squares, singular_values, svd,
    symmetric_eigen, DEFAULT_RANK_TOL,
};

/// How to apply `J_t = f'(x_t)` to a vector.
pub enum JacobianAccess<'a> {
    /// The map's own `jvp_f`.
    Analytic(&'a dyn FixedPointMap),
    /// Central finite differences of `g` with relative step `step`.
    FiniteDifference {
        map: &'a dyn FixedPointMap,
        step: f64,
    },
    /// An explicit dense Jacobian, for oracle checks and small problems.
    ExplicitDense(Array2<f64>),
}

impl<'a> JacobianAccess<'a> {
    /// Analytic access when the map provides `jvp_f`, finite differences
    /// otherwise.
    pub fn for_map(map: &'a dyn FixedPointMap, step: f64) -> Self {
        let d = map.dimension();
        let probe = map.jvp_f(&Array1::zeros(d), &Array1::zeros(d));
        if probe.is_some() {
            JacobianAccess::Analytic(map)
        } else {
            JacobianAccess::FiniteDifference { map, step }
        }
    }

    /// Applies `J(x) v`.
    pub fn jvp(&self, x: &Array1<f64>, v: &Array1<f64>) -> Array1<f64> {
        match self {
            JacobianAccess::Analytic(map) => map
                .jvp_f(x, v)
                .unwrap_or_else(|| fd_jvp(*map, f64::EPSILON.sqrt(), x, v)),
            JacobianAccess::FiniteDifference { map, step } => fd_jvp(*map, *step, x, v),
            JacobianAccess::ExplicitDense(j) => j.dot(v),
        }
    }

    /// Finite-difference access must behave linearly on random probes;
    /// returns the worst relative defect `||J(u+v) - Ju - Jv||` scaled
    /// by `||u|| + ||v||`.
    pub fn linearity_defect(&self, x: &Array1<f64>, u: &Array1<f64>, v: &Array1<f64>) -> f64 {
        let lhs = self.jvp(x, &(u + v));
        let rhs = self.jvp(x, u) + self.jvp(x, v);
        let denom = (norm(u) + norm(v)).max(f64::MIN_POSITIVE);
        norm(&(lhs - rhs)) / denom
    }
}

fn fd_jvp(map: &dyn FixedPointMap, step: f64, x: &Array1<f64>, v: &Array1<f64>) -> Array1<f64> {
    let vn = norm(v);
    if vn == 0.0 {
        return Array1::zeros(x.len());
    }
    let eps = step * (1.0 + norm(x)) / vn;
    let gp = map.eval_g(&(x + &(eps * v)));
    let gm = map.eval_g(&(x - &(eps * v)));
    (gp - gm) / (2.0 * eps) - v
}

/// Full diagnostics snapshot for one global iteration.
///
/// `et_bound` is present when the map's `gamma` is known;
/// `spd_gain_upper` and `vandermonde_upper` when a dense (symmetric)
/// Jacobian is available. Condition numbers may be infinite for
/// degenerate histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: usize,
    pub theta: f64,
    pub jac_gmres_gain: f64,
    pub et_norm: f64,
    pub et_bound: Option<f64>,
    pub cond_s: f64,
    pub cond_y: f64,
    pub cond_g: f64,
    pub s_minus_g_norm: f64,
    pub y_minus_jg_norm: f64,
    pub spd_gain_upper: Option<f64>,
    pub vandermonde_upper: Option<f64>,
    /// `sigma_min(Y_t) / ||f_t||`, reported for inspection.
    pub sigma_min_y_ratio: f64,
    pub s_rank_deficient: bool,
}

/// Multisecant error `||E_t||` with its rank bookkeeping.
#[derive(Debug, Clone)]
pub struct EtEstimate {
    pub norm: f64,
    pub effective_rank: usize,
    /// Set when the rank filter discarded S columns.
    pub rank_deficient: bool,
}

/// Optimization gain `theta = ||(I - P_Y) f_t|| / ||f_t||`, the relative
/// residual of the unconstrained mixing least squares. Zero residual
/// returns 0.
pub fn optimization_gain(history: &SecantHistory) -> Result<f64, FixedPointError> {
    let f0 = history.f0();
    let fnorm = norm(&f0);
    if fnorm == 0.0 {
        return Ok(0.0);
    }
    let ls = qr_least_squares(&history.y_matrix(), &f0, DEFAULT_RANK_TOL)?;
    Ok(ls.residual_norm / fnorm)
}

/// Multisecant error `||E_t|| = ||(J_t S_t - Y_t) S_t^dagger||` in the
/// spectral norm.
///
/// With the thin SVD `S = U Sigma V^T` truncated at `rank_tol`, the
/// product `(J S - Y) V Sigma_r^{-1} U^T` has the same spectral norm as
/// its `d x r` left factor, so no `d x d` matrix is ever formed.
pub fn multisecant_error(
    history: &SecantHistory,
    jac: &JacobianAccess,
    x_t: &Array1<f64>,
    rank_tol: f64,
) -> Result<EtEstimate, FixedPointError> {
    let s = history.s_matrix();
    let y = history.y_matrix();
    let (d, m) = (s.nrows(), s.ncols());
    let mut defect = Array2::zeros((d, m));
    for l in 0..m {
        let js = jac.jvp(x_t, &s.column(l).to_owned());
        for i in 0..d {
            defect[[i, l]] = js[i] - y[[i, l]];
        }
    }
    let dec = svd(&s)?;
    let smax = dec.sigma[0];
    let rank = if smax == 0.0 {
        0
    } else {
        dec.sigma.iter().take_while(|&&v| v >= rank_tol * smax).count()
    };
    if rank == 0 {
        return Ok(EtEstimate {
            norm: 0.0,
            effective_rank: 0,
            rank_deficient: true,
        });
    }
    let mut w = Array2::zeros((d, rank));
    let dv = defect.dot(&dec.v);
    for j in 0..rank {
        for i in 0..d {
            w[[i, j]] = dv[[i, j]] / dec.sigma[j];
        }
    }
    Ok(EtEstimate {
        norm: singular_values(&w)[0],
        effective_rank: rank,
        rank_deficient: rank < m,
    })
}

/// Upper bound `gamma * m^{3/2} * cond(S_t) * ||f_t||` on the
/// multisecant error.
pub fn et_upper_bound(history: &SecantHistory, gamma: f64, f_norm: f64) -> f64 {
    let m = history.window() as f64;
    gamma * m.powf(1.5) * condition_number(&history.s_matrix()) * f_norm
}

/// Krylov matrix `G_t = [f_t, g'(x_t) f_t, ..., g'(x_t)^{m-1} f_t]`
/// built by repeated application of the `g'` operator.
pub fn krylov_matrix_g(
    jvp_g: &dyn Fn(&Array1<f64>) -> Array1<f64>,
    f_t: &Array1<f64>,
    m: usize,
) -> Array2<f64> {
    let d = f_t.len();
    let mut g = Array2::zeros((d, m));
    let mut col = f_t.clone();
    for l in 0..m {
        for i in 0..d {
            g[[i, l]] = col[i];
        }
        if l + 1 < m {
            col = jvp_g(&col);
        }
    }
    g
}

/// Spectral-norm distances `(||S_t - G_t||, ||Y_t - J_t G_t||)`; the
/// second factor applies `J_t` to each Krylov column.
pub fn s_g_distance(
    history: &SecantHistory,
    g: &Array2<f64>,
    jac: &JacobianAccess,
    x_t: &Array1<f64>,
) -> Result<(f64, f64), FixedPointError> {
    let s = history.s_matrix();
    let y = history.y_matrix();
    if s.dim() != g.dim() {
        return Err(FixedPointError::DimensionMismatch(format!(
            "S is {:?} but G is {:?}",
            s.dim(),
            g.dim()
        )));
    }
    let sg = singular_values(&(&s - g))[0];
    let (d, m) = s.dim();
    let mut jg = Array2::zeros((d, m));
    for l in 0..m {
        let col = jac.jvp(x_t, &g.column(l).to_owned());
        for i in 0..d {
            jg[[i, l]] = col[i];
        }
    }
    let yjg = singular_values(&(&y - &jg))[0];
    Ok((sg, yjg))
}

/// Jacobian-GMRES(m) gain `||r_t^J|| / ||f_t||`: the relative residual
/// of GMRES(m) on `J_t p = f_t`. This is the limit of `theta_t` as the
/// residual vanishes.
pub fn jacobian_gmres_gain(
    jac: &JacobianAccess,
    x_t: &Array1<f64>,
    f_t: &Array1<f64>,
    m: usize,
) -> f64 {
    let fnorm = norm(f_t);
    if fnorm == 0.0 {
        return 0.0;
    }
    let (_, res) = arnoldi_gmres(&|v: &Array1<f64>| jac.jvp(x_t, v), f_t, m);
    res / fnorm
}

/// SPD GMRES gain bound `2 ((sqrt(cond) - 1)/(sqrt(cond) + 1))^m`.
pub fn spd_gain_upper(cond_j: f64, m: usize) -> f64 {
    let rc = cond_j.sqrt();
    2.0 * ((rc - 1.0) / (rc + 1.0)).powi(m as i32)
}

/// Conditioning bound `sqrt(m) / (min|a_i| * sigma_min(V_m))` for the
/// Krylov matrix of a symmetric `g'` with eigenvalues `eigs` and
/// normalized eigenbasis coefficients `coeffs` of `f_t`. Degenerate
/// inputs (repeated eigenvalues, vanishing coefficients) give infinity.
pub fn vandermonde_cond_bound(eigs: &Array1<f64>, coeffs: &Array1<f64>, m: usize) -> f64 {
    let d = eigs.len();
    let min_a = coeffs.iter().fold(f64::INFINITY, |a, &c| a.min(c.abs()));
    if min_a == 0.0 || m == 0 {
        return f64::INFINITY;
    }
    let mut v = Array2::zeros((d, m));
    for i in 0..d {
        let mut p = 1.0;
        for j in 0..m {
            v[[i, j]] = p;
            p *= eigs[i];
        }
    }
    let sv = singular_values(&v);
    let smin = sv[sv.len() - 1];
    if smin == 0.0 {
        return f64::INFINITY;
    }
    (m as f64).sqrt() / (min_a * smin)
}

/// One-step residual bound
/// `[(1-beta) + beta*kappa] theta ||f|| +
///  sqrt(1-theta^2) ||B^{-1}|| [(gamma/2) sqrt(1-theta^2) ||B^{-1}|| + C_E] ||f||^2`.
#[allow(clippy::too_many_arguments)]
pub fn one_step_bound(
    theta: f64,
    beta: f64,
    kappa: f64,
    gamma: f64,
    b_inv_norm: f64,
    c_e: f64,
    f_norm: f64,
) -> f64 {
    let root = (1.0 - (theta * theta).min(1.0)).sqrt();
    let first = ((1.0 - beta) + beta * kappa) * theta * f_norm;
    let second = root * b_inv_norm * ((gamma / 2.0) * root * b_inv_norm + c_e) * f_norm * f_norm;
    first + second
}

impl DiagnosticsRecord {
    /// Computes the full record for one recorded global iteration.
    ///
    /// `gamma` enables `et_bound`; a dense Jacobian in `jac` enables the
    /// SPD gain bound, and additionally the Vandermonde bound when that
    /// Jacobian is symmetric.
    pub fn compute(
        t: usize,
        x_t: &Array1<f64>,
        history: &SecantHistory,
        jac: &JacobianAccess,
        gamma: Option<f64>,
    ) -> Result<Self, FixedPointError> {
        let m = history.window();
        let f0 = history.f0();
        let f_norm = norm(&f0);
        let theta = optimization_gain(history)?;
        let gain = jacobian_gmres_gain(jac, x_t, &f0, m);
        let et = multisecant_error(history, jac, x_t, DEFAULT_RANK_TOL)?;
        let s = history.s_matrix();
        let y = history.y_matrix();
        let g = krylov_matrix_g(&|v: &Array1<f64>| v + &jac.jvp(x_t, v), &f0, m);
        let (sg, yjg) = s_g_distance(history, &g, jac, x_t)?;
        let sv_y = singular_values(&y);
        let sigma_min_y_ratio = if f_norm > 0.0 {
            sv_y[sv_y.len() - 1] / f_norm
        } else {
            0.0
        };
        let (spd, vander) = match jac {
            JacobianAccess::ExplicitDense(j) => {
                let cond_j = condition_number(j);
                let spd = Some(spd_gain_upper(cond_j, m));
                let sym = {
                    let diff = j - &j.t();
                    singular_values(&diff)[0] <= 1e-10 * singular_values(j)[0].max(1.0)
                };
                let vander = if sym && f_norm > 0.0 {
                    // g' = I + J shares eigenvectors with J.
                    let (lam_f, q) = symmetric_eigen(j)?;
                    let lam_g = lam_f.mapv(|v| v + 1.0);
                    let coeffs = q.t().dot(&f0) / f_norm;
                    Some(vandermonde_cond_bound(&lam_g, &coeffs, m))
                } else {
                    None
                };
                (spd, vander)
            }
            _ => (None, None),
        };
        Ok(DiagnosticsRecord {
            t,
            theta,
            jac_gmres_gain: gain,
            et_norm: et.norm,
            et_bound: gamma.map(|gm| et_upper_bound(history, gm, f_norm)),
            cond_s: condition_number(&s),
            cond_y: condition_number(&y),
            cond_g: condition_number(&g),
            s_minus_g_norm: sg,
            y_minus_jg_norm: yjg,
            spd_gain_upper: spd,
            vandermonde_upper: vander,
            sigma_min_y_ratio,
            s_rank_deficient: et.rank_deficient,
        })
    }
}
