use std::cell::Cell;
use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use super::{
    solve_mixing, FixedPointError, FixedPointMap, IterationRecord, MixingSolution, SecantHistory,
    SolveReport, SolveStatus, SolverConfig,
};
use crate::linalg::{arnoldi_gmres, norm, qr_least_squares};

/// Snapshot handed to [`run_aap_observed`] observers after each global
/// step, before the history is discarded.
pub struct AapStep<'a> {
    pub t: usize,
    pub x_t: &'a Array1<f64>,
    pub history: &'a SecantHistory,
    pub mixing: &'a MixingSolution,
    pub x_next: &'a Array1<f64>,
    pub g_evals_cumulative: usize,
}

enum StopReason {
    Budget,
    NonFinite,
}

impl StopReason {
    fn status(&self) -> SolveStatus {
        match self {
            StopReason::Budget => SolveStatus::MaxIters,
            StopReason::NonFinite => SolveStatus::NumericalBreakdown,
        }
    }
}

/// Counts g evaluations and enforces the optional budget; interior
/// mutability lets immutable matvec closures share it.
struct Evaluator<'a> {
    map: &'a dyn FixedPointMap,
    count: Cell<usize>,
    budget: Option<usize>,
}

impl<'a> Evaluator<'a> {
    fn new(map: &'a dyn FixedPointMap, budget: Option<usize>) -> Self {
        Self {
            map,
            count: Cell::new(0),
            budget,
        }
    }

    fn g(&self, x: &Array1<f64>) -> Result<Array1<f64>, StopReason> {
        if let Some(b) = self.budget {
            if self.count.get() >= b {
                return Err(StopReason::Budget);
            }
        }
        let out = self.map.eval_g(x);
        self.count.set(self.count.get() + 1);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(StopReason::NonFinite)
        }
    }

    fn count(&self) -> usize {
        self.count.get()
    }
}

/// Resolves the stopping threshold lazily so relative mode can scale by
/// the first observed residual norm.
struct Tolerance {
    base: f64,
    relative: bool,
    resolved: Cell<Option<f64>>,
}

impl Tolerance {
    fn new(cfg: &SolverConfig) -> Self {
        Self {
            base: cfg.tol,
            relative: cfg.relative_tol,
            resolved: Cell::new(None),
        }
    }

    fn met(&self, rn: f64) -> bool {
        let t = match self.resolved.get() {
            Some(t) => t,
            None => {
                let t = if self.relative { self.base * rn } else { self.base };
                self.resolved.set(Some(t));
                t
            }
        };
        rn <= t
    }
}

fn report(
    records: Vec<IterationRecord>,
    status: SolveStatus,
    final_x: Array1<f64>,
    final_residual_norm: f64,
    g_evals: usize,
) -> SolveReport {
    SolveReport {
        records,
        status,
        final_x,
        final_residual_norm,
        g_evals,
    }
}

/// Plain Picard iteration `x <- g(x)`.
pub fn run_picard(
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport, FixedPointError> {
    cfg.validate(map.dimension())?;
    let ev = Evaluator::new(map, cfg.max_g_evals);
    let tol = Tolerance::new(cfg);
    let mut x = x0.clone();
    let mut records = Vec::new();
    let mut last_rn = f64::INFINITY;
    for t in 0..cfg.max_global_iters {
        let gx = match ev.g(&x) {
            Ok(v) => v,
            Err(r) => return Ok(report(records, r.status(), x, last_rn, ev.count())),
        };
        let f = &gx - &x;
        let rn = norm(&f);
        records.push(IterationRecord {
            t,
            x: x.clone(),
            residual_norm: rn,
            theta: None,
            alpha: None,
            g_evals_cumulative: ev.count(),
            sweep_residual_norms: vec![],
            rank_deficient: false,
        });
        if tol.met(rn) {
            return Ok(report(records, SolveStatus::Converged, x, rn, ev.count()));
        }
        last_rn = rn;
        x = gx;
    }
    Ok(report(records, SolveStatus::MaxIters, x, last_rn, ev.count()))
}

/// AAP(m): alternate a Picard sweep with one Anderson mixing step.
pub fn run_aap(
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport, FixedPointError> {
    run_aap_observed(map, x0, cfg, |_| {})
}

/// [`run_aap`] with a per-step observer; diagnostics hook in here to see
/// each sweep's history and mixing solution without re-running the map.
pub fn run_aap_observed<F: FnMut(&AapStep)>(
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
    mut observer: F,
) -> Result<SolveReport, FixedPointError> {
    let d = map.dimension();
    cfg.validate(d)?;
    let ev = Evaluator::new(map, cfg.max_g_evals);
    let tol = Tolerance::new(cfg);
    let mut x = x0.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last_rn = f64::INFINITY;
    for t in 0..cfg.max_global_iters {
        // Picard sweep with the stopping test after every evaluation.
        let mut xs: Vec<Array1<f64>> = vec![x.clone()];
        let mut fs: Vec<Array1<f64>> = Vec::with_capacity(cfg.m + 1);
        let mut norms: Vec<f64> = Vec::with_capacity(cfg.m + 1);
        for l in 0..=cfg.m {
            let gx = match ev.g(&xs[l]) {
                Ok(v) => v,
                Err(r) => {
                    // Fall back to the last point whose residual is known.
                    let (fx, frn) = if norms.is_empty() {
                        (x.clone(), last_rn)
                    } else {
                        (xs[norms.len() - 1].clone(), norms[norms.len() - 1])
                    };
                    if !norms.is_empty() {
                        records.push(IterationRecord {
                            t,
                            x: x.clone(),
                            residual_norm: norms[0],
                            theta: None,
                            alpha: None,
                            g_evals_cumulative: ev.count(),
                            sweep_residual_norms: norms.clone(),
                            rank_deficient: false,
                        });
                    }
                    return Ok(report(records, r.status(), fx, frn, ev.count()));
                }
            };
            let f = &gx - &xs[l];
            let rn = norm(&f);
            norms.push(rn);
            if tol.met(rn) {
                records.push(IterationRecord {
                    t,
                    x: x.clone(),
                    residual_norm: norms[0],
                    theta: None,
                    alpha: None,
                    g_evals_cumulative: ev.count(),
                    sweep_residual_norms: norms.clone(),
                    rank_deficient: false,
                });
                return Ok(report(
                    records,
                    SolveStatus::Converged,
                    xs[l].clone(),
                    rn,
                    ev.count(),
                ));
            }
            fs.push(f);
            if l < cfg.m {
                xs.push(gx);
            }
        }
        let mut iterates = Array2::zeros((d, cfg.m + 1));
        let mut residuals = Array2::zeros((d, cfg.m + 1));
        for l in 0..=cfg.m {
            for i in 0..d {
                iterates[[i, l]] = xs[l][i];
                residuals[[i, l]] = fs[l][i];
            }
        }
        let history = SecantHistory::from_parts(iterates, residuals)?;
        let mixing = solve_mixing(&history, cfg.rank_tol)?;
        let beta = cfg.beta.at(t);
        if !(beta >= 0.0) {
            return Err(FixedPointError::InvalidConfig(format!(
                "beta schedule produced {beta} at t = {t}"
            )));
        }
        let x_next =
            history.mix_iterates(&mixing.alpha) + beta * &history.mix_residuals(&mixing.alpha);
        observer(&AapStep {
            t,
            x_t: &x,
            history: &history,
            mixing: &mixing,
            x_next: &x_next,
            g_evals_cumulative: ev.count(),
        });
        records.push(IterationRecord {
            t,
            x: x.clone(),
            residual_norm: norms[0],
            theta: Some(mixing.theta),
            alpha: Some(mixing.alpha.clone()),
            g_evals_cumulative: ev.count(),
            sweep_residual_norms: norms,
            rank_deficient: mixing.rank_deficient,
        });
        last_rn = records.last().unwrap().residual_norm;
        x = x_next;
    }
    Ok(report(records, SolveStatus::MaxIters, x, last_rn, ev.count()))
}

/// Classical Anderson acceleration with a sliding window of up to `m`
/// secant pairs and an AA step at every iteration.
pub fn run_aa(
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport, FixedPointError> {
    run_anderson(map, x0, cfg, false)
}

/// Restarted Anderson: the window grows from 0 to `m` with damped Picard
/// steps in between, takes one AA step, then resets to an empty history.
pub fn run_res_aa(
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport, FixedPointError> {
    run_anderson(map, x0, cfg, true)
}

fn run_anderson(
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
    restart: bool,
) -> Result<SolveReport, FixedPointError> {
    let d = map.dimension();
    cfg.validate(d)?;
    let ev = Evaluator::new(map, cfg.max_g_evals);
    let tol = Tolerance::new(cfg);
    let mut x = x0.clone();
    let mut prev: Option<(Array1<f64>, Array1<f64>)> = None;
    let mut pairs: VecDeque<(Array1<f64>, Array1<f64>)> = VecDeque::new();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last_rn = f64::INFINITY;
    for t in 0..cfg.max_global_iters {
        let gx = match ev.g(&x) {
            Ok(v) => v,
            Err(r) => return Ok(report(records, r.status(), x, last_rn, ev.count())),
        };
        let f = &gx - &x;
        let rn = norm(&f);
        if let Some((xp, fp)) = prev.take() {
            pairs.push_back((&x - &xp, &f - &fp));
            while pairs.len() > cfg.m {
                pairs.pop_front();
            }
        }
        if tol.met(rn) {
            records.push(IterationRecord {
                t,
                x: x.clone(),
                residual_norm: rn,
                theta: None,
                alpha: None,
                g_evals_cumulative: ev.count(),
                sweep_residual_norms: vec![],
                rank_deficient: false,
            });
            return Ok(report(records, SolveStatus::Converged, x, rn, ev.count()));
        }
        let beta = cfg.beta.at(t);
        if !(beta >= 0.0) {
            return Err(FixedPointError::InvalidConfig(format!(
                "beta schedule produced {beta} at t = {t}"
            )));
        }
        let w = pairs.len();
        let take_aa_step = if restart { w == cfg.m } else { w >= 1 };
        if !take_aa_step {
            let x_next = &x + &(beta * &f);
            records.push(IterationRecord {
                t,
                x: x.clone(),
                residual_norm: rn,
                theta: None,
                alpha: None,
                g_evals_cumulative: ev.count(),
                sweep_residual_norms: vec![],
                rank_deficient: false,
            });
            prev = Some((x, f));
            x = x_next;
            last_rn = rn;
            continue;
        }
        let mut s_mat = Array2::zeros((d, w));
        let mut y_mat = Array2::zeros((d, w));
        for (j, (s, y)) in pairs.iter().enumerate() {
            for i in 0..d {
                s_mat[[i, j]] = s[i];
                y_mat[[i, j]] = y[i];
            }
        }
        let ls = qr_least_squares(&y_mat, &f, cfg.rank_tol)?;
        let z = ls.solution;
        let theta = if rn > 0.0 { ls.residual_norm / rn } else { 0.0 };
        let x_next = &x + &(beta * &f) - &s_mat.dot(&z) - beta * &y_mat.dot(&z);
        // Affine coefficients over the window points, oldest first.
        let mut alpha = Array1::zeros(w + 1);
        alpha[0] = z[0];
        for j in 1..w {
            alpha[j] = z[j] - z[j - 1];
        }
        alpha[w] = 1.0 - z[w - 1];
        records.push(IterationRecord {
            t,
            x: x.clone(),
            residual_norm: rn,
            theta: Some(theta),
            alpha: Some(alpha),
            g_evals_cumulative: ev.count(),
            sweep_residual_norms: vec![],
            rank_deficient: ls.effective_rank < w,
        });
        if restart {
            pairs.clear();
            prev = None;
        } else {
            prev = Some((x, f));
        }
        x = x_next;
        last_rn = rn;
    }
    Ok(report(records, SolveStatus::MaxIters, x, last_rn, ev.count()))
}

/// Jacobian-free Newton-GMRES: each global step runs GMRES(m) on
/// `J_t p = f_t` with `J_t = f'(x_t)` applied through the map's analytic
/// Jacobian-vector product or a central finite difference, then updates
/// `x <- x - p`. No line search.
pub fn run_newton_gmres(
    map: &dyn FixedPointMap,
    x0: &Array1<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport, FixedPointError> {
    let d = map.dimension();
    cfg.validate(d)?;
    let ev = Evaluator::new(map, cfg.max_g_evals);
    let tol = Tolerance::new(cfg);
    let mut x = x0.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last_rn = f64::INFINITY;
    for t in 0..cfg.max_global_iters {
        let gx = match ev.g(&x) {
            Ok(v) => v,
            Err(r) => return Ok(report(records, r.status(), x, last_rn, ev.count())),
        };
        let f = &gx - &x;
        let rn = norm(&f);
        records.push(IterationRecord {
            t,
            x: x.clone(),
            residual_norm: rn,
            theta: None,
            alpha: None,
            g_evals_cumulative: ev.count(),
            sweep_residual_norms: vec![],
            rank_deficient: false,
        });
        if tol.met(rn) {
            return Ok(report(records, SolveStatus::Converged, x, rn, ev.count()));
        }
        let budget_hit = Cell::new(false);
        let broke = Cell::new(false);
        let x_norm = norm(&x);
        let matvec = |v: &Array1<f64>| -> Array1<f64> {
            if let Some(jv) = map.jvp_f(&x, v) {
                return jv;
            }
            let vn = norm(v);
            if vn == 0.0 {
                return Array1::zeros(d);
            }
            let eps = cfg.jvp_fd_step * (1.0 + x_norm) / vn;
            let xp = &x + &(eps * v);
            let xm = &x - &(eps * v);
            match (ev.g(&xp), ev.g(&xm)) {
                (Ok(gp), Ok(gm)) => (gp - gm) / (2.0 * eps) - v,
                (Err(r), _) | (_, Err(r)) => {
                    match r {
                        StopReason::Budget => budget_hit.set(true),
                        StopReason::NonFinite => broke.set(true),
                    }
                    Array1::zeros(d)
                }
            }
        };
        let (p, _) = arnoldi_gmres(&matvec, &f, cfg.m);
        if broke.get() {
            return Ok(report(
                records,
                SolveStatus::NumericalBreakdown,
                x,
                rn,
                ev.count(),
            ));
        }
        if budget_hit.get() {
            return Ok(report(records, SolveStatus::MaxIters, x, rn, ev.count()));
        }
        records.last_mut().unwrap().g_evals_cumulative = ev.count();
        last_rn = rn;
        x = &x - &p;
    }
    Ok(report(records, SolveStatus::MaxIters, x, last_rn, ev.count()))
}
