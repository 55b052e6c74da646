//! Outer problem in the control and the penalty path.
//!
//! The reduced objective `f(u)` is the optimal value of the inner problem.
//! It is piecewise quadratic; its gradient is `S (nu u - tau p_C)` with `p`
//! the adjoint, and on a fixed inner active set its Hessian is
//! `nu S - tau S dp_C/du`. The outer iteration is a projected Newton method
//! on `u >= 0` with an Armijo search along the projection arc.

use thiserror::Error as ThisError;

use crate::error::{check_len, Error, Result};
use crate::fem::StateOperators;
use crate::linalg::dense_spd_solve;
use crate::scalar::{norm_inf, Real};
use crate::state::{solve_state, StateSolverOptions};

use super::inner::{InnerProblem, InnerSolution, NodeKind};
use super::{
    evaluate_j, evaluate_j_gamma, kkt_residual, penalty_term, ControlProblemData, KktState,
    PathSchedule,
};

#[derive(Clone, Debug)]
pub struct PathOptions<T> {
    pub max_outer: usize,
    pub max_backtracks: usize,
    pub max_inner: usize,
    /// Outer stopping tolerance is `max(tol_floor, tol_scale / gamma)`, and
    /// `tol_floor` on the last level.
    pub tol_floor: T,
    pub tol_scale: T,
    /// Residual still accepted when the iteration stalls.
    pub stall_tol: T,
    pub armijo: T,
}

impl<T: Real> Default for PathOptions<T> {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_backtracks: 40,
            max_inner: 200,
            tol_floor: T::lit(1e-8),
            tol_scale: T::lit(1e-3),
            stall_tol: T::lit(1e-6),
            armijo: T::lit(1e-4),
        }
    }
}

/// One penalty level of the path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathTraceEntry {
    pub gamma: f64,
    pub epsilon: f64,
    pub j: f64,
    pub j_gamma: f64,
    /// `(xi, y + eps xi)` at the level's solution.
    pub penalty: f64,
    pub residuals: [f64; 5],
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct PathSolution<T> {
    pub state: KktState<T>,
    pub trace: Vec<PathTraceEntry>,
    pub kinds: Vec<NodeKind>,
}

impl<T> PathSolution<T> {
    /// `max_k gamma_k * penalty_k`: the smallest `C` with
    /// `penalty_k <= C / gamma_k` along the trace.
    pub fn penalty_constant(&self) -> f64 {
        self.trace
            .iter()
            .map(|e| e.gamma * e.penalty)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, ThisError)]
#[error("path following failed after {} completed levels: {source}", trace.len())]
pub struct PathError {
    pub trace: Vec<PathTraceEntry>,
    #[source]
    pub source: Error,
}

impl From<PathError> for Error {
    fn from(e: PathError) -> Self {
        e.source
    }
}

/// Penalty level and optional inner active-set guess.
#[derive(Clone, Debug)]
pub struct ActiveSetContext<T> {
    pub gamma: T,
    pub epsilon: T,
    pub kinds: Option<Vec<NodeKind>>,
}

impl<T: Real> ActiveSetContext<T> {
    pub fn new(gamma: T, epsilon: T) -> Self {
        Self {
            gamma,
            epsilon,
            kinds: None,
        }
    }
}

struct Eval<T> {
    sol: InnerSolution<T>,
    f: T,
    grad: Vec<T>,
}

fn initial_kinds<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    u: &[T],
) -> Vec<NodeKind> {
    match solve_state(ops, u, &data.advected, &StateSolverOptions::default()) {
        Ok(s) => ops
            .free_nodes()
            .iter()
            .map(|&i| NodeKind::from_state(s.y[i], s.xi[i]))
            .collect(),
        Err(_) => vec![NodeKind::Free; ops.n_free()],
    }
}

fn full_fields<T: Real>(prob: &InnerProblem<'_, T>, sol: &InnerSolution<T>) -> (Vec<T>, Vec<T>) {
    let ops = prob.ops;
    let y = ops.extend(&sol.y, T::zero());
    let mut xi = prob.data.advected.xi_bar.clone();
    for (k, &i) in ops.free_nodes().iter().enumerate() {
        xi[i] = sol.xi[k];
    }
    (y, xi)
}

fn evaluate<T: Real>(
    prob: &InnerProblem<'_, T>,
    u: &[T],
    gamma: T,
    eps: T,
    kinds: &[NodeKind],
) -> Result<Eval<T>> {
    let sol = prob.solve(u, gamma, eps, kinds)?;
    let (y, xi) = full_fields(prob, &sol);
    let f = evaluate_j_gamma(prob.data, prob.ops, &y, &xi, u, gamma, eps)?;
    let ops = prob.ops;
    let grad = (0..ops.n_controls())
        .map(|j| {
            let pc = ops.control_row(j).map_or(T::zero(), |r| sol.p[r]);
            ops.control_weights[j] * (prob.data.nu * u[j] - ops.tau * pc)
        })
        .collect();
    Ok(Eval { sol, f, grad })
}

fn prepare<'a, T: Real>(
    data: &'a ControlProblemData<T>,
    ops: &'a StateOperators<T>,
    u: &[T],
    ctx: &ActiveSetContext<T>,
) -> Result<(InnerProblem<'a, T>, Vec<NodeKind>)> {
    check_len("control vector", ops.n_controls(), u.len())?;
    let prob = InnerProblem::new(data, ops)?;
    let kinds = match &ctx.kinds {
        Some(k) => {
            check_len("active set", ops.n_free(), k.len())?;
            k.clone()
        }
        None => initial_kinds(data, ops, u),
    };
    Ok((prob, kinds))
}

/// Reduced relaxed objective `u -> J_gamma(y(u), xi(u), u)` with
/// `(y(u), xi(u))` the inner minimizer.
pub fn reduced_objective<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    u: &[T],
    ctx: &ActiveSetContext<T>,
) -> Result<T> {
    let (prob, kinds) = prepare(data, ops, u, ctx)?;
    Ok(evaluate(&prob, u, ctx.gamma, ctx.epsilon, &kinds)?.f)
}

/// Gradient of [`reduced_objective`] with respect to the control
/// coefficients.
pub fn reduced_gradient<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    u: &[T],
    ctx: &ActiveSetContext<T>,
) -> Result<Vec<T>> {
    let (prob, kinds) = prepare(data, ops, u, ctx)?;
    Ok(evaluate(&prob, u, ctx.gamma, ctx.epsilon, &kinds)?.grad)
}

/// `|u - max(0, tau p_C / nu)|_inf / max(1, |u|_inf)`.
fn control_gap<T: Real>(ops: &StateOperators<T>, nu: T, u: &[T], grad: &[T]) -> T {
    // u - grad / (nu s) equals tau p_C / nu
    let gap = (0..u.len())
        .map(|j| {
            let target = (u[j] - grad[j] / (nu * ops.control_weights[j])).max(T::zero());
            (u[j] - target).abs()
        })
        .fold(T::zero(), T::max);
    gap / norm_inf(u).max(T::one())
}

struct LevelResult<T> {
    u: Vec<T>,
    eval: Eval<T>,
    outer: usize,
    inner: usize,
}

fn newton_direction<T: Real>(
    prob: &InnerProblem<'_, T>,
    ev: &Eval<T>,
    free: &[usize],
) -> Result<Option<Vec<T>>> {
    let ops = prob.ops;
    let nu = prob.data.nu;
    let m = free.len();
    let mut h = vec![vec![T::zero(); m]; m];
    for (b, &j) in free.iter().enumerate() {
        let dp = prob.adjoint_sensitivity(&ev.sol, j)?;
        for (a, &i) in free.iter().enumerate() {
            let dpc = ops.control_row(i).map_or(T::zero(), |r| dp[r]);
            h[a][b] = -ops.tau * ops.control_weights[i] * dpc;
        }
        h[b][b] += nu * ops.control_weights[j];
    }
    let half = T::lit(0.5);
    for a in 0..m {
        for b in 0..a {
            let v = half * (h[a][b] + h[b][a]);
            h[a][b] = v;
            h[b][a] = v;
        }
    }
    let rhs: Vec<T> = free.iter().map(|&j| -ev.grad[j]).collect();
    Ok(dense_spd_solve(&h, &rhs))
}

fn solve_level<T: Real>(
    prob: &InnerProblem<'_, T>,
    u0: &[T],
    kinds: &[NodeKind],
    gamma: T,
    eps: T,
    tol: T,
    opts: &PathOptions<T>,
) -> Result<LevelResult<T>> {
    let ops = prob.ops;
    let nu = prob.data.nu;
    let nc = ops.n_controls();
    let noise = T::lit(64.0) * T::epsilon();
    let resolve = T::lit(1e4) * T::epsilon();
    let mut u: Vec<T> = u0.iter().map(|&v| v.max(T::zero())).collect();
    let mut ev = evaluate(prob, &u, gamma, eps, kinds)?;
    let mut inner = ev.sol.iterations;
    let mut history = Vec::new();
    for outer in 0..opts.max_outer {
        let gap = control_gap(ops, nu, &u, &ev.grad);
        history.push(gap.as_f64());
        if gap <= tol {
            return Ok(LevelResult { u, eval: ev, outer, inner });
        }
        let scaled = |j: usize| -ev.grad[j] / (nu * ops.control_weights[j]);
        let delta = T::lit(1e-3).min(gap * norm_inf(&u).max(T::one()));
        let mut free = Vec::new();
        let mut d = vec![T::zero(); nc];
        for j in 0..nc {
            if u[j] <= delta && ev.grad[j] > T::zero() {
                d[j] = scaled(j);
            } else {
                free.push(j);
            }
        }
        let newton = if free.is_empty() {
            None
        } else {
            newton_direction(prob, &ev, &free)?
        };
        let mut directions = Vec::new();
        if let Some(dn) = newton {
            let mut dd = d.clone();
            for (k, &j) in free.iter().enumerate() {
                dd[j] = dn[k];
            }
            directions.push(dd);
        }
        let mut dg = d;
        for &j in &free {
            dg[j] = scaled(j);
        }
        directions.push(dg);

        let mut accepted = None;
        'dirs: for dir in &directions {
            let mut alpha = T::one();
            for _ in 0..opts.max_backtracks {
                let trial: Vec<T> = (0..nc)
                    .map(|j| (u[j] + alpha * dir[j]).max(T::zero()))
                    .collect();
                if trial == u {
                    break;
                }
                let cand = match evaluate(prob, &trial, gamma, eps, &ev.sol.kinds) {
                    Ok(c) => c,
                    Err(Error::NotConverged { iterations, .. }) => {
                        // far trial points can defeat the inner active set search
                        inner += iterations;
                        alpha *= T::lit(0.5);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                inner += cand.sol.iterations;
                let pred: T = (0..nc).map(|j| ev.grad[j] * (trial[j] - u[j])).sum();
                // below the rounding level of f, compare optimality gaps instead
                let resolved = -pred > resolve * ev.f.abs();
                let ok = if resolved {
                    cand.f <= ev.f + opts.armijo * pred + noise * ev.f.abs()
                } else {
                    control_gap(ops, nu, &trial, &cand.grad) < gap
                };
                if ok {
                    accepted = Some((trial, cand));
                    break 'dirs;
                }
                alpha *= T::lit(0.5);
            }
        }
        match accepted {
            Some((trial, cand)) => {
                u = trial;
                ev = cand;
            }
            None => {
                if gap <= opts.stall_tol {
                    log::debug!("outer iteration stalled at gap {gap:e} (gamma {gamma:e}); accepted");
                    return Ok(LevelResult { u, eval: ev, outer, inner });
                }
                return Err(Error::NotConverged {
                    solver: "projected Newton (line search)",
                    iterations: outer,
                    residual: gap.as_f64(),
                    history,
                });
            }
        }
    }
    let gap = control_gap(ops, nu, &u, &ev.grad);
    if gap <= opts.stall_tol {
        return Ok(LevelResult {
            u,
            eval: ev,
            outer: opts.max_outer,
            inner,
        });
    }
    Err(Error::NotConverged {
        solver: "projected Newton",
        iterations: opts.max_outer,
        residual: gap.as_f64(),
        history,
    })
}

fn kkt_state<T: Real>(
    prob: &InnerProblem<'_, T>,
    sol: &InnerSolution<T>,
    u: Vec<T>,
    gamma: T,
    epsilon: T,
) -> KktState<T> {
    let (y, xi) = full_fields(prob, sol);
    KktState {
        y,
        xi,
        u,
        p: prob.ops.extend(&sol.p, T::zero()),
        lam: prob.ops.extend(&sol.lam, T::zero()),
        gamma,
        epsilon,
    }
}

/// Follows the penalty path, warm-starting every level from the previous
/// one. `warm_start` seeds the control of the first level; without it the
/// path starts from `u = 0`.
pub fn solve_penalized_step<T: Real>(
    data: &ControlProblemData<T>,
    ops: &StateOperators<T>,
    schedule: &PathSchedule<T>,
    warm_start: Option<&KktState<T>>,
    opts: &PathOptions<T>,
) -> std::result::Result<PathSolution<T>, PathError> {
    let mut trace = Vec::with_capacity(schedule.len());
    let fail = |trace: &Vec<PathTraceEntry>, source: Error| PathError {
        trace: trace.clone(),
        source,
    };
    schedule.validate().map_err(|e| fail(&trace, e))?;
    let mut prob = InnerProblem::new(data, ops).map_err(|e| fail(&trace, e))?;
    prob.max_iterations = opts.max_inner;
    let mut u = match warm_start {
        Some(w) if w.u.len() == ops.n_controls() => w.u.clone(),
        Some(w) => {
            let e = Error::DimensionMismatch {
                context: "warm start control",
                expected: ops.n_controls(),
                actual: w.u.len(),
            };
            return Err(fail(&trace, e));
        }
        None => vec![T::zero(); ops.n_controls()],
    };
    u.iter_mut().for_each(|v| *v = v.max(T::zero()));
    let mut kinds = initial_kinds(data, ops, &u);
    let mut last = None;
    for (k, (&gamma, &eps)) in schedule.gammas.iter().zip(&schedule.epsilons).enumerate() {
        let tol = if k + 1 == schedule.len() {
            opts.tol_floor
        } else {
            opts.tol_floor.max(opts.tol_scale / gamma)
        };
        let level =
            solve_level(&prob, &u, &kinds, gamma, eps, tol, opts).map_err(|e| fail(&trace, e))?;
        let state = kkt_state(&prob, &level.eval.sol, level.u.clone(), gamma, eps);
        let entry = (|| -> Result<PathTraceEntry> {
            let res = kkt_residual(data, ops, &state)?;
            Ok(PathTraceEntry {
                gamma: gamma.as_f64(),
                epsilon: eps.as_f64(),
                j: evaluate_j(data, ops, &state.y, &state.xi, &state.u)?.as_f64(),
                j_gamma: level.eval.f.as_f64(),
                penalty: penalty_term(ops, &state.y, &state.xi, eps)?.as_f64(),
                residuals: res.r.map(|v| v.as_f64()),
                outer_iterations: level.outer,
                inner_iterations: level.inner,
            })
        })()
        .map_err(|e| fail(&trace, e))?;
        log::trace!(
            "level {k}: gamma {:.3e} J {:.6e} penalty {:.3e} outer {} inner {}",
            entry.gamma,
            entry.j,
            entry.penalty,
            entry.outer_iterations,
            entry.inner_iterations
        );
        trace.push(entry);
        u = level.u;
        kinds = level.eval.sol.kinds.clone();
        last = Some(state);
    }
    Ok(PathSolution {
        state: last.expect("schedule is non-empty"),
        trace,
        kinds,
    })
}
