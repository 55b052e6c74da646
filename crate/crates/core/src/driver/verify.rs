//! Invariant checks on the first step of a configured run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{
    project_control, reduced_gradient, reduced_objective, solve_penalized_step, ActiveSetContext,
    ControlProblemData,
};
use crate::error::Result;
use crate::semilag::{advect, characteristic_feet};
use crate::state::{check_maximum_principle, solve_state, StateSolverOptions};

use super::simulation::{Simulation, SimulationConfig, MAXIMUM_PRINCIPLE_TOL};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

/// Solves step 1 and checks optimality, path monotonicity, penalty
/// nonnegativity, the sign conditions of the stored state, projection
/// idempotence and the reduced gradient against central differences.
pub fn verify_first_step(config: SimulationConfig) -> Result<Vec<Check>> {
    let sim = Simulation::new(config)?;
    let cfg = &sim.config;
    let ops = &sim.ops;
    let t = cfg.tau;
    let feet = characteristic_feet(&cfg.mesh, &cfg.velocity, t, cfg.tau);
    let advected = advect(&cfg.mesh, &feet, &sim.y, &sim.xi)?;
    let desired = cfg.benchmark.desired(&cfg.mesh, t, &cfg.xi0)?;
    let data = ControlProblemData::new(desired.y_d, desired.xi_d, cfg.nu, advected)?;
    let path = solve_penalized_step(&data, ops, &cfg.schedule, None, &cfg.path_options)?;
    let mut checks = Vec::new();

    let last = path.trace.last().expect("non-empty schedule");
    let kkt_max = last.residuals.iter().fold(0.0f64, |m, &v| m.max(v));
    checks.push(check("kkt_residuals", kkt_max <= 1e-6, format!("max relative residual {kkt_max:.3e}")));

    let first = path.trace[0].penalty;
    checks.push(check(
        "penalty_decreases",
        last.penalty <= first,
        format!("first {first:.3e}, last {:.3e}", last.penalty),
    ));

    let worst = path
        .trace
        .iter()
        .map(|e| e.j - e.j_gamma)
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = path.trace.iter().map(|e| e.j.abs()).fold(1.0, f64::max);
    checks.push(check(
        "penalty_nonnegative",
        worst <= 1e-12 * scale,
        format!("max J - J_gamma {worst:.3e}"),
    ));

    let state = solve_state(ops, &path.state.u, &data.advected, &StateSolverOptions::default())?;
    let mp = check_maximum_principle(&state, MAXIMUM_PRINCIPLE_TOL);
    checks.push(check(
        "maximum_principle",
        mp.passed,
        format!("worst violation {:.3e}", mp.worst_violation),
    ));
    let ymax = state.y.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let comp = state
        .y
        .iter()
        .zip(&state.xi)
        .map(|(a, b)| a.min(*b).abs())
        .fold(0.0, f64::max);
    checks.push(check(
        "complementarity",
        comp <= 1e-10 * ymax,
        format!("max |min(y, xi)| {comp:.3e}"),
    ));

    let once = project_control(ops, &path.state.p, cfg.nu)?;
    let mut p_again = vec![0.0; ops.n_nodes()];
    for (j, &i) in ops.control_nodes.iter().enumerate() {
        p_again[i] = once[j] * cfg.nu / ops.tau;
    }
    let twice = project_control(ops, &p_again, cfg.nu)?;
    let idem = once
        .iter()
        .zip(&twice)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    checks.push(check("projection_idempotent", idem <= 1e-12, format!("max change {idem:.3e}")));

    // central differences at a mid-path level, away from u = 0
    let k = cfg.schedule.len() / 2;
    let ctx = ActiveSetContext::new(cfg.schedule.gammas[k], cfg.schedule.epsilons[k]);
    let u0: Vec<f64> = path.state.u.iter().map(|v| v + 0.1 * (1.0 + v)).collect();
    let grad = reduced_gradient(&data, ops, &u0, &ctx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_fd = 0.0f64;
    for _ in 0..3 {
        let d: Vec<f64> = (0..u0.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-6 * u0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let plus: Vec<f64> = u0.iter().zip(&d).map(|(u, d)| u + h * d).collect();
        let minus: Vec<f64> = u0.iter().zip(&d).map(|(u, d)| u - h * d).collect();
        let fd = (reduced_objective(&data, ops, &plus, &ctx)? - reduced_objective(&data, ops, &minus, &ctx)?)
            / (2.0 * h);
        let an: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum();
        worst_fd = worst_fd.max((fd - an).abs() / an.abs().max(1e-12));
    }
    checks.push(check(
        "gradient_finite_differences",
        worst_fd <= 1e-5,
        format!("max relative mismatch {worst_fd:.3e}"),
    ));
    Ok(checks)
}
