//! Reference solver for small state problems: enumerates every active set
//! and keeps the one satisfying all sign conditions. Dense elimination only,
//! no code shared with the production solver beyond the assembled operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{assemble_operators, Conductivity, StateOperators};
use crate::mesh::{build_interval_mesh, BoundaryTag, IntervalTags};
use crate::scalar::Real;
use crate::semilag::AdvectedPair;

use super::{solve_state, StateSolverOptions};

/// Largest free-node count accepted by [`enumerate_state`].
pub const MAX_ORACLE_NODES: usize = 20;

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub y: Vec<f64>,
    pub xi: Vec<f64>,
    pub patterns_tried: usize,
}

/// Solves the state system by trying all `2^n` active sets.
///
/// Returns full nodal vectors; Dirichlet nodes hold `y = 0` and the advected
/// solid fraction.
pub fn enumerate_state<T: Real>(
    ops: &StateOperators<T>,
    u: &[T],
    advected: &AdvectedPair<T>,
) -> Result<OracleSolution> {
    let n = ops.n_free();
    if n > MAX_ORACLE_NODES {
        return Err(Error::invalid(format!(
            "enumeration limited to {MAX_ORACLE_NODES} free nodes, got {n}"
        )));
    }
    let a: Vec<Vec<f64>> = ops
        .a
        .to_dense()
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.as_f64()).collect())
        .collect();
    let free = ops.free_nodes();
    let l: Vec<f64> = free.iter().map(|&i| ops.lumped_mass[i].as_f64()).collect();
    let mut b = vec![0.0; n];
    for (j, &node) in ops.control_nodes.iter().enumerate() {
        if let Some(r) = ops.free_index(node) {
            b[r] += ops.tau.as_f64() * ops.control_weights[j].as_f64() * u[j].as_f64();
        }
    }
    for (k, &i) in free.iter().enumerate() {
        b[k] += l[k] * (advected.y_bar[i].as_f64() - advected.xi_bar[i].as_f64());
    }
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-11 * scale;

    for mask in 0u32..(1u32 << n) {
        let active = |i: usize| mask & (1 << i) != 0;
        let inactive: Vec<usize> = (0..n).filter(|&i| !active(i)).collect();
        let sub: Vec<Vec<f64>> = inactive
            .iter()
            .map(|&i| inactive.iter().map(|&j| a[i][j]).collect())
            .collect();
        let rhs: Vec<f64> = inactive.iter().map(|&i| b[i]).collect();
        let Some(yi) = dense_solve(sub, rhs) else {
            continue;
        };
        let mut y = vec![0.0; n];
        for (k, &i) in inactive.iter().enumerate() {
            y[i] = yi[k];
        }
        if y.iter().any(|&v| v < -tol) {
            continue;
        }
        let mu: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * y[j]).sum::<f64>() - b[i])
            .collect();
        if (0..n).any(|i| active(i) && mu[i] < -tol) {
            continue;
        }
        let mut y_full = vec![0.0; ops.n_nodes()];
        let mut xi_full: Vec<f64> = advected.xi_bar.iter().map(|v| v.as_f64()).collect();
        for (k, &i) in free.iter().enumerate() {
            y_full[i] = y[k].max(0.0);
            xi_full[i] = if active(k) { mu[k].max(0.0) / l[k] } else { 0.0 };
        }
        return Ok(OracleSolution {
            y: y_full,
            xi: xi_full,
            patterns_tried: mask as usize + 1,
        });
    }
    Err(Error::NotConverged {
        solver: "active-set enumeration",
        iterations: 1 << n,
        residual: f64::NAN,
        history: Vec::new(),
    })
}

/// A random admissible one-dimensional state problem.
pub struct OracleInstance {
    pub ops: StateOperators<f64>,
    pub u: Vec<f64>,
    pub advected: AdvectedPair<f64>,
}

/// Interval with a heated left end and a fixed right end, `free_nodes`
/// unknowns, random step length, control and advected data.
pub fn random_instance<R: Rng>(free_nodes: usize, rng: &mut R) -> Result<OracleInstance> {
    let tags = IntervalTags {
        left: BoundaryTag::Control,
        right: BoundaryTag::Dirichlet,
    };
    let mesh = build_interval_mesh(1.0, free_nodes.max(2), tags)?;
    let tau = rng.gen_range(1e-3..0.2);
    let ops = assemble_operators(&mesh, &Conductivity::Constant(1.0), tau)?;
    let n = mesh.n_nodes();
    let u = vec![rng.gen_range(0.0..20.0)];
    let y_bar: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    let xi_bar: Vec<f64> = (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..1.0),
        })
        .collect();
    Ok(OracleInstance {
        ops,
        u,
        advected: AdvectedPair::at_rest(y_bar, xi_bar),
    })
}

/// Largest nodal differences between [`solve_state`] and [`enumerate_state`]
/// over a batch of random instances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    pub max_diff_y: f64,
    pub max_diff_xi: f64,
}

/// Runs `instances` random problems with `free_nodes` unknowns each, seeded
/// deterministically.
pub fn compare_with_enumeration(free_nodes: usize, instances: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        instances,
        max_diff_y: 0.0,
        max_diff_xi: 0.0,
    };
    for _ in 0..instances {
        let inst = random_instance(free_nodes, &mut rng)?;
        let fast = solve_state(&inst.ops, &inst.u, &inst.advected, &StateSolverOptions::default())?;
        let slow = enumerate_state(&inst.ops, &inst.u, &inst.advected)?;
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        report.max_diff_y = report.max_diff_y.max(diff(&fast.y, &slow.y));
        report.max_diff_xi = report.max_diff_xi.max(diff(&fast.xi, &slow.xi));
    }
    Ok(report)
}
