use melt_control::control::{
    evaluate_j, evaluate_j_gamma, penalty_term, project_control, project_xi, reduced_gradient,
    reduced_objective, ActiveSetContext, ControlProblemData, EpsilonRule,
};
use melt_control::fem::{assemble_operators, Conductivity};
use melt_control::mesh::{build_interval_mesh, BoundaryTag, IntervalTags};
use melt_control::semilag::AdvectedPair;
use melt_control::{Operators, ProblemData};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Five nodes, heated at both ends, half melted.
fn five_nodes() -> (Operators, ProblemData) {
    let tags = IntervalTags {
        left: BoundaryTag::Control,
        right: BoundaryTag::Control,
    };
    let mesh = build_interval_mesh(1.0, 4, tags).unwrap();
    let ops = assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.05).unwrap();
    let y_bar = vec![0.4, 0.1, 0.0, 0.0, 0.2];
    let xi_bar = vec![0.0, 0.0, 1.0, 0.6, 0.0];
    let y_d = vec![0.8, 0.3, 0.0, 0.1, 0.5];
    let xi_d = vec![0.0, 0.0, 1.0, 0.0, 0.0];
    let data = ControlProblemData::new(y_d, xi_d, 1e-2, AdvectedPair::at_rest(y_bar, xi_bar)).unwrap();
    (ops, data)
}

fn fd_mismatch(gamma: f64, u: &[f64], seed: u64) -> f64 {
    let (ops, data) = five_nodes();
    let ctx = ActiveSetContext::new(gamma, EpsilonRule::quartic().eval(gamma));
    let g = reduced_gradient(&data, &ops, u, &ctx).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-5;
        let at = |s: f64| -> f64 {
            let v: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            reduced_objective(&data, &ops, &v, &ctx).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - an).abs() / an.abs().max(1e-8));
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    for (gamma, u) in [(1e-2, [1.0, 2.0]), (1.0, [0.5, 1.5]), (50.0, [3.0, 0.7])] {
        let m = fd_mismatch(gamma, &u, 11);
        assert!(m <= 1e-5, "gamma {gamma}: {m:e}");
    }
}

#[test]
fn objective_is_smooth_along_a_line() {
    // second differences stay bounded, so there is no kink near the test points
    let (ops, data) = five_nodes();
    let ctx = ActiveSetContext::new(1.0, EpsilonRule::quartic().eval(1.0));
    let f = |s: f64| reduced_objective(&data, &ops, &[0.5 + s, 1.5 - s], &ctx).unwrap();
    let h = 1e-3;
    let c0 = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
    let c1 = (f(2.0 * h) - 2.0 * f(h) + f(0.0)) / (h * h);
    assert!((c0 - c1).abs() <= 1e-3 * c0.abs().max(1.0), "{c0} {c1}");
}

proptest! {
    #[test]
    fn control_projection_is_idempotent(p in prop::collection::vec(-5.0f64..5.0, 5), nu in 1e-4f64..1.0) {
        let (ops, _) = five_nodes();
        let once = project_control(&ops, &p, nu).unwrap();
        prop_assert!(once.iter().all(|&v| v >= 0.0));
        let mut again = vec![0.0; ops.n_nodes()];
        for (j, &i) in ops.control_nodes.iter().enumerate() {
            again[i] = once[j] * nu / ops.tau;
        }
        let twice = project_control(&ops, &again, nu).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn xi_projection_fixes_its_own_output(
        p in -3.0f64..3.0, xi_d in 0.0f64..=1.0, lam in 0.0f64..2.0, y in 0.0f64..2.0, gamma in 1e-3f64..1e3
    ) {
        let eps = EpsilonRule::quartic().eval(gamma);
        let xi = project_xi(p, xi_d, lam, y, gamma, eps);
        prop_assert!(xi >= 0.0);
        // feed back the adjoint value that reproduces xi exactly
        let p2 = xi * (1.0 + 2.0 * gamma * eps) - xi_d - eps * lam + gamma * y;
        let again = project_xi(p2, xi_d, lam, y, gamma, eps);
        prop_assert!((again - xi).abs() <= 1e-10 * (1.0 + gamma * y + p.abs()));
    }

    #[test]
    fn relaxed_objective_dominates_on_admissible_points(
        y in prop::collection::vec(0.0f64..2.0, 5),
        xi in prop::collection::vec(0.0f64..=1.0, 5),
        u in prop::collection::vec(0.0f64..3.0, 2),
        gamma in 1e-3f64..1e4,
    ) {
        let (ops, data) = five_nodes();
        let eps = EpsilonRule::quartic().eval(gamma);
        let j = evaluate_j(&data, &ops, &y, &xi, &u).unwrap();
        let jg = evaluate_j_gamma(&data, &ops, &y, &xi, &u, gamma, eps).unwrap();
        prop_assert!(penalty_term(&ops, &y, &xi, eps).unwrap() >= 0.0);
        prop_assert!(jg >= j);
    }
}
