//! Per-step state solve: temperature and solid fraction from the
//! complementarity system
//!
//! ```text
//! A y = L xi + B u + L (y_bar - xi_bar),   y >= 0,  xi >= 0,  xi_i y_i = 0,
//! ```
//!
//! with `L` the lumped mass. Equivalently `y` is the obstacle-problem
//! minimizer of `1/2 q^T A q - q^T b` over `q >= 0` and `L xi` is its
//! multiplier.

pub mod oracle;

use crate::error::{check_len, Error, Result};
use crate::fem::StateOperators;
use crate::linalg::{BandCholesky, TripletBuilder};
use crate::scalar::{norm_inf, Real};
use crate::semilag::AdvectedPair;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    pub residual: f64,
    /// True when active-set iteration cycled and projected SOR took over.
    pub used_fallback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSolution<T> {
    pub y: Vec<T>,
    pub xi: Vec<T>,
    /// Lumped inner product `(y, xi)`.
    pub complementarity_residual: T,
    pub stats: SolverStats,
}

#[derive(Clone, Debug)]
pub struct StateSolverOptions<T> {
    pub max_iterations: usize,
    /// Sign tolerance on inputs, scaled by `max(1, |field|_inf)`.
    pub tol_sign: T,
    pub tol_comp: T,
    pub sor_omega: T,
    pub sor_max_sweeps: usize,
    pub sor_tol: T,
}

impl<T: Real> Default for StateSolverOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tol_sign: T::lit(1e-12),
            tol_comp: T::lit(1e-10),
            sor_omega: T::lit(1.5),
            sor_max_sweeps: 200_000,
            sor_tol: T::lit(1e-14),
        }
    }
}

fn check_sign<T: Real>(
    field: &'static str,
    values: &[T],
    lower: Option<T>,
    upper: Option<T>,
    tol: T,
) -> Result<()> {
    let tol = tol * norm_inf(values).max(T::one());
    for (node, &v) in values.iter().enumerate() {
        let low_bad = lower.map_or(false, |lo| v < lo - tol);
        let high_bad = upper.map_or(false, |hi| v > hi + tol);
        if low_bad || high_bad || !v.is_finite() {
            return Err(Error::SignCondition {
                field,
                node,
                value: v.as_f64(),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_admissible<T: Real>(
    ops: &StateOperators<T>,
    u: &[T],
    advected: &AdvectedPair<T>,
    tol: T,
) -> Result<()> {
    check_len("control vector", ops.n_controls(), u.len())?;
    check_len("advected temperature", ops.n_nodes(), advected.y_bar.len())?;
    check_len("advected solid fraction", ops.n_nodes(), advected.xi_bar.len())?;
    check_sign("u", u, Some(T::zero()), None, tol)?;
    check_sign("y_bar", &advected.y_bar, Some(T::zero()), None, tol)?;
    check_sign("xi_bar", &advected.xi_bar, Some(T::zero()), Some(T::one()), tol)?;
    Ok(())
}

/// Right-hand side `B u + L (y_bar - xi_bar)` on the free nodes.
pub fn state_load<T: Real>(
    ops: &StateOperators<T>,
    u: &[T],
    advected: &AdvectedPair<T>,
) -> Result<Vec<T>> {
    let mut b = ops.apply_b(u)?;
    for (k, &i) in ops.free_nodes().iter().enumerate() {
        b[k] += ops.lumped_mass[i] * (advected.y_bar[i] - advected.xi_bar[i]);
    }
    Ok(b)
}

/// Solves `A y = b` with `y_i = 0` for every active `i`.
fn solve_with_active<T: Real>(ops: &StateOperators<T>, b: &[T], active: &[bool]) -> Result<Vec<T>> {
    if !active.iter().any(|&a| a) {
        return ops.a_factor().solve(b);
    }
    let n = b.len();
    let mut tb = TripletBuilder::new(n, n);
    for i in 0..n {
        if active[i] {
            tb.push(i, i, T::one());
            continue;
        }
        for (j, v) in ops.a.row(i) {
            if !active[j] {
                tb.push(i, j, v);
            }
        }
    }
    let rhs: Vec<T> = b
        .iter()
        .zip(active)
        .map(|(&v, &a)| if a { T::zero() } else { v })
        .collect();
    BandCholesky::factor(&tb.build())?.solve(&rhs)
}

fn projected_sor<T: Real>(
    ops: &StateOperators<T>,
    b: &[T],
    start: &[T],
    opts: &StateSolverOptions<T>,
) -> Result<(Vec<T>, usize)> {
    let mut y: Vec<T> = start.iter().map(|&v| v.max(T::zero())).collect();
    let diag: Vec<T> = (0..b.len()).map(|i| ops.a.get(i, i)).collect();
    let mut history = Vec::new();
    for sweep in 1..=opts.sor_max_sweeps {
        let mut change = T::zero();
        for i in 0..b.len() {
            let r = b[i] - ops.a.row(i).map(|(j, v)| v * y[j]).sum::<T>();
            let new = (y[i] + opts.sor_omega * r / diag[i]).max(T::zero());
            change = change.max((new - y[i]).abs());
            y[i] = new;
        }
        let rel = change / norm_inf(&y).max(T::one());
        if sweep % 1000 == 0 {
            history.push(rel.as_f64());
        }
        if rel <= opts.sor_tol {
            return Ok((y, sweep));
        }
    }
    Err(Error::NotConverged {
        solver: "projected SOR",
        iterations: opts.sor_max_sweeps,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

fn assemble_solution<T: Real>(
    ops: &StateOperators<T>,
    advected: &AdvectedPair<T>,
    y_free: &[T],
    xi_free: &[T],
    stats: SolverStats,
) -> StateSolution<T> {
    let y = ops.extend(y_free, T::zero());
    let mut xi = advected.xi_bar.clone();
    for (k, &i) in ops.free_nodes().iter().enumerate() {
        xi[i] = xi_free[k];
    }
    let complementarity_residual = ops.lumped_dot(&y, &xi).unwrap_or_else(|_| T::nan());
    StateSolution {
        y,
        xi,
        complementarity_residual,
        stats,
    }
}

/// Primal-dual active set solve of the state complementarity system.
///
/// Dirichlet nodes keep `y = 0` and carry the advected solid fraction.
pub fn solve_state<T: Real>(
    ops: &StateOperators<T>,
    u: &[T],
    advected: &AdvectedPair<T>,
    opts: &StateSolverOptions<T>,
) -> Result<StateSolution<T>> {
    check_admissible(ops, u, advected, opts.tol_sign)?;
    let b = state_load(ops, u, advected)?;
    let l = ops.free_lumped_mass();
    let n = b.len();

    let mut y = ops.a_factor().solve(&b)?;
    let mut active: Vec<bool> = y.iter().map(|&v| v < T::zero()).collect();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let mut used_fallback = false;
    let mut iterations = 0;
    loop {
        iterations += 1;
        y = solve_with_active(ops, &b, &active)?;
        let ay = ops.a.mul_vec(&y)?;
        let next: Vec<bool> = (0..n)
            .map(|i| {
                if active[i] {
                    ay[i] - b[i] > T::zero()
                } else {
                    y[i] < T::zero()
                }
            })
            .collect();
        if next == active {
            let xi: Vec<T> = (0..n)
                .map(|i| {
                    if active[i] {
                        (ay[i] - b[i]) / l[i]
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let stats = SolverStats {
                iterations,
                residual: 0.0,
                used_fallback,
            };
            return Ok(assemble_solution(ops, advected, &y, &xi, stats));
        }
        seen.push(std::mem::replace(&mut active, next));
        let cycled = seen.contains(&active);
        if cycled || iterations >= opts.max_iterations {
            if used_fallback {
                return Err(Error::NotConverged {
                    solver: "primal-dual active set",
                    iterations,
                    residual: f64::NAN,
                    history: Vec::new(),
                });
            }
            log::debug!("active-set iteration cycled after {iterations} steps; switching to projected SOR");
            let (ys, sweeps) = projected_sor(ops, &b, &y, opts)?;
            iterations += sweeps;
            used_fallback = true;
            let ay = ops.a.mul_vec(&ys)?;
            let scale = norm_inf(&ys).max(T::one()) * T::lit(1e-10);
            active = (0..n)
                .map(|i| ys[i] <= scale && ay[i] - b[i] > T::zero())
                .collect();
            seen.clear();
        }
    }
}

/// Regularized Heaviside graph: 1 for `x <= 0`, `1 - x/eps` on `[0, eps]`,
/// 0 beyond.
pub fn regularized_heaviside<T: Real>(x: T, eps: T) -> T {
    (T::one() - x / eps).max(T::zero()).min(T::one())
}

#[derive(Clone, Debug)]
pub struct RegularizedOptions<T> {
    pub max_iterations: usize,
    /// Stop when `|T(y) - y| <= rel_tol * |y|`.
    pub rel_tol: T,
    /// Upper bound for the damping factor.
    pub max_damping: T,
}

impl<T: Real> Default for RegularizedOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 5_000_000,
            rel_tol: T::lit(1e-10),
            max_damping: T::lit(0.5),
        }
    }
}

/// Spectral radius estimate of `A^{-1} L` by power iteration.
fn mass_ratio_bound<T: Real>(ops: &StateOperators<T>, l: &[T]) -> Result<T> {
    let mut v: Vec<T> = (0..l.len())
        .map(|i| T::one() + T::lit(0.1) * T::from_usize_lossy(i % 7))
        .collect();
    let mut rho = T::one();
    for _ in 0..60 {
        let lv: Vec<T> = v.iter().zip(l).map(|(&a, &b)| a * b).collect();
        let w = ops.a_factor().solve(&lv)?;
        let nw = norm_inf(&w);
        if nw == T::zero() {
            break;
        }
        rho = nw / norm_inf(&v).max(T::min_positive_value());
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok(rho * T::lit(1.2))
}

/// Solves `A y = L H_eps(y) + b` by damped iteration of the linearized map
/// `y -> A^{-1} (L H_eps(y) + b)`.
///
/// The damping factor is `min(max_damping, eps / (eps + rho))`, with `rho`
/// bounding the spectrum of `A^{-1} L`; the undamped map has Lipschitz
/// constant of order `rho / eps` and diverges for small `eps`.
pub fn solve_state_regularized<T: Real>(
    ops: &StateOperators<T>,
    u: &[T],
    advected: &AdvectedPair<T>,
    epsilon: T,
    opts: &RegularizedOptions<T>,
) -> Result<StateSolution<T>> {
    if !(epsilon > T::zero()) {
        return Err(Error::invalid(format!(
            "regularization width must be positive, got {epsilon}"
        )));
    }
    check_admissible(ops, u, advected, T::lit(1e-12))?;
    let b = state_load(ops, u, advected)?;
    let l = ops.free_lumped_mass();
    let rho = mass_ratio_bound(ops, &l)?;
    let theta = opts.max_damping.min(epsilon / (epsilon + rho));

    let map = |y: &[T]| -> Result<Vec<T>> {
        let rhs: Vec<T> = (0..y.len())
            .map(|i| l[i] * regularized_heaviside(y[i], epsilon) + b[i])
            .collect();
        ops.a_factor().solve(&rhs)
    };
    let mut y = vec![T::zero(); b.len()];
    let mut history = Vec::new();
    for it in 1..=opts.max_iterations {
        let ty = map(&y)?;
        let mut diff = T::zero();
        for (yi, &ti) in y.iter_mut().zip(&ty) {
            let d = ti - *yi;
            diff = diff.max(d.abs());
            *yi += theta * d;
        }
        let rel = diff / norm_inf(&y).max(T::min_positive_value());
        if it % 10_000 == 0 {
            history.push(rel.as_f64());
        }
        if diff == T::zero() || rel <= opts.rel_tol {
            let xi: Vec<T> = y.iter().map(|&v| regularized_heaviside(v, epsilon)).collect();
            let stats = SolverStats {
                iterations: it,
                residual: rel.as_f64(),
                used_fallback: false,
            };
            return Ok(assemble_solution(ops, advected, &y, &xi, stats));
        }
    }
    Err(Error::NotConverged {
        solver: "regularized fixed point",
        iterations: opts.max_iterations,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaximumPrincipleReport {
    pub passed: bool,
    /// Largest violation found (0 when none).
    pub worst_violation: f64,
    pub node: Option<usize>,
    pub field: Option<&'static str>,
}

/// Checks `y >= -tol` and `-tol <= xi <= 1 + tol` node by node.
pub fn check_fields<T: Real>(y: &[T], xi: &[T], tol: T) -> MaximumPrincipleReport {
    let mut report = MaximumPrincipleReport {
        passed: true,
        worst_violation: 0.0,
        node: None,
        field: None,
    };
    let mut note = |v: T, node: usize, field: &'static str| {
        let v = v.as_f64();
        if v > tol.as_f64() || v.is_nan() {
            report.passed = false;
        }
        if v > report.worst_violation || (v.is_nan() && report.node.is_none()) {
            report.worst_violation = v;
            report.node = Some(node);
            report.field = Some(field);
        }
    };
    for (i, &v) in y.iter().enumerate() {
        note(-v, i, "y");
    }
    for (i, &v) in xi.iter().enumerate() {
        note(-v, i, "xi");
        note(v - T::one(), i, "xi");
    }
    report
}

pub fn check_maximum_principle<T: Real>(sol: &StateSolution<T>, tol: T) -> MaximumPrincipleReport {
    check_fields(&sol.y, &sol.xi, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_operators, Conductivity};
    use crate::mesh::BoundaryTag::*;
    use crate::mesh::{build_interval_mesh, IntervalTags};

    fn ops(n: usize, tau: f64) -> StateOperators<f64> {
        let m = build_interval_mesh(
            1.0,
            n,
            IntervalTags {
                left: Control,
                right: Dirichlet,
            },
        )
        .unwrap();
        assemble_operators(&m, &Conductivity::Constant(1.0), tau).unwrap()
    }

    #[test]
    fn frozen_substance_stays_frozen() {
        let o = ops(10, 0.01);
        let adv = AdvectedPair::at_rest(vec![0.0; 11], vec![1.0; 11]);
        let s = solve_state(&o, &[0.0], &adv, &Default::default()).unwrap();
        assert!(s.y.iter().all(|&v| v == 0.0));
        assert!(s.xi.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn zero_data_zero_solution() {
        let o = ops(10, 0.01);
        let adv = AdvectedPair::at_rest(vec![0.0; 11], vec![0.0; 11]);
        let s = solve_state(&o, &[0.0], &adv, &Default::default()).unwrap();
        assert!(s.y.iter().chain(&s.xi).all(|&v| v == 0.0));
    }

    #[test]
    fn heated_front_is_complementary() {
        let o = ops(20, 0.05);
        let adv = AdvectedPair::at_rest(vec![0.0; 21], vec![1.0; 21]);
        let s = solve_state(&o, &[30.0], &adv, &Default::default()).unwrap();
        assert!(s.y[0] > 0.0);
        assert!(s.xi[20] == 1.0);
        for (y, xi) in s.y.iter().zip(&s.xi) {
            assert!(y.min(*xi) <= 1e-14);
        }
        assert!(check_maximum_principle(&s, 1e-12).passed);
        assert!(s.complementarity_residual.abs() < 1e-14);
    }

    #[test]
    fn rejects_inadmissible_inputs() {
        let o = ops(4, 0.1);
        let adv = AdvectedPair::at_rest(vec![0.0; 5], vec![1.0; 5]);
        let err = solve_state(&o, &[-1.0], &adv, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::SignCondition { field: "u", .. }));
        let bad = AdvectedPair::at_rest(vec![0.0; 5], vec![1.5; 5]);
        let err = solve_state(&o, &[0.0], &bad, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::SignCondition { field: "xi_bar", .. }));
    }

    #[test]
    fn heaviside_values() {
        let eps = 0.1f64;
        assert_eq!(regularized_heaviside(-1.0, eps), 1.0);
        assert_eq!(regularized_heaviside(0.0, eps), 1.0);
        assert_eq!(regularized_heaviside(eps, eps), 0.0);
        assert!((regularized_heaviside(eps / 2.0, eps) - 0.5).abs() < 1e-15);
        assert_eq!(regularized_heaviside(1.0, eps), 0.0);
    }

    #[test]
    fn regularized_zero_fixed_point() {
        let o = ops(6, 0.1);
        let adv = AdvectedPair::at_rest(vec![0.0; 7], vec![1.0; 7]);
        let s = solve_state_regularized(&o, &[0.0], &adv, 1e-3, &Default::default()).unwrap();
        assert!(s.y.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn regularized_rejects_zero_width() {
        let o = ops(6, 0.1);
        let adv = AdvectedPair::at_rest(vec![0.0; 7], vec![1.0; 7]);
        assert!(solve_state_regularized(&o, &[0.0], &adv, 0.0, &Default::default()).is_err());
    }

    #[test]
    fn maximum_principle_flags_constructed_violation() {
        let mut y = vec![0.0; 6];
        y[3] = -1e-3;
        let r = check_fields(&y, &[0.5; 6], 1e-12);
        assert!(!r.passed);
        assert_eq!(r.node, Some(3));
        assert_eq!(r.field, Some("y"));
        assert!((r.worst_violation - 1e-3).abs() < 1e-18);
        let r = check_fields(&[0.0; 3], &[0.0, 1.0 + 1e-6, 0.2], 1e-12);
        assert_eq!((r.passed, r.node), (false, Some(1)));
        assert!(check_fields(&[0.0; 3], &[0.0, 1.0, 0.2], 1e-12).passed);
    }

    #[test]
    fn single_precision_solve() {
        let m = build_interval_mesh(
            1.0f32,
            8,
            IntervalTags {
                left: Control,
                right: Dirichlet,
            },
        )
        .unwrap();
        let o = assemble_operators(&m, &Conductivity::Constant(1.0f32), 0.05).unwrap();
        let adv = AdvectedPair::at_rest(vec![0.0f32; 9], vec![1.0f32; 9]);
        let s = solve_state(&o, &[20.0f32], &adv, &Default::default()).unwrap();
        assert!(check_maximum_principle(&s, 1e-6).passed);
        assert!(s.y[0] > 0.0);
    }
}
