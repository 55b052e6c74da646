use melt_control::fem::{assemble_operators, Conductivity};
use melt_control::mesh::{build_interval_mesh, build_rectangle_mesh, BoundaryTag, IntervalTags, RectangleTags};
use melt_control::semilag::AdvectedPair;
use melt_control::state::oracle::{enumerate_state, random_instance};
use melt_control::state::{
    check_maximum_principle, solve_state, solve_state_regularized, RegularizedOptions, StateSolverOptions,
};
use melt_control::{Error, Operators};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Dense residual of `A y - L xi - b` on free nodes.
fn balance_residual(ops: &Operators, u: &[f64], adv: &AdvectedPair<f64>, y: &[f64], xi: &[f64]) -> f64 {
    let a = ops.a.to_dense();
    let free = ops.free_nodes();
    let load = ops.apply_b(u).unwrap();
    let mut worst = 0.0f64;
    for (r, &i) in free.iter().enumerate() {
        let ay: f64 = free.iter().enumerate().map(|(c, &j)| a[r][c] * y[j]).sum();
        let l = ops.lumped_mass[i];
        let rhs = l * xi[i] + load[r] + l * (adv.y_bar[i] - adv.xi_bar[i]);
        worst = worst.max((ay - rhs).abs());
    }
    worst
}

#[test]
fn matches_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..200 {
        let n = 2 + k % 9;
        let inst = random_instance(n, &mut rng).unwrap();
        let fast = solve_state(&inst.ops, &inst.u, &inst.advected, &StateSolverOptions::default()).unwrap();
        let slow = enumerate_state(&inst.ops, &inst.u, &inst.advected).unwrap();
        worst.0 = worst.0.max(max_diff(&fast.y, &slow.y));
        worst.1 = worst.1.max(max_diff(&fast.xi, &slow.xi));
        assert!(balance_residual(&inst.ops, &inst.u, &inst.advected, &fast.y, &fast.xi) < 1e-10);
    }
    assert!(worst.0 <= 1e-10 && worst.1 <= 1e-10, "{worst:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solutions_satisfy_the_complementarity_system(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(n, &mut rng).unwrap();
        let s = solve_state(&inst.ops, &inst.u, &inst.advected, &StateSolverOptions::default()).unwrap();
        prop_assert!(check_maximum_principle(&s, 1e-12).passed);
        for (&y, &xi) in s.y.iter().zip(&s.xi) {
            prop_assert!(y.min(xi).abs() <= 1e-12 * y.abs().max(1.0));
        }
        prop_assert!(balance_residual(&inst.ops, &inst.u, &inst.advected, &s.y, &s.xi) < 1e-10);
    }
}

fn melting_bar() -> (Operators, Vec<f64>, AdvectedPair<f64>) {
    let tags = IntervalTags {
        left: BoundaryTag::Control,
        right: BoundaryTag::Dirichlet,
    };
    let mesh = build_interval_mesh(1.0, 20, tags).unwrap();
    let ops = assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.05).unwrap();
    let n = mesh.n_nodes();
    let xi: Vec<f64> = mesh.coords().iter().map(|p| if p[0] < 0.3 { 0.0 } else { 1.0 }).collect();
    let y: Vec<f64> = mesh.coords().iter().map(|p| (0.3f64 - p[0]).max(0.0)).collect();
    assert_eq!(y.len(), n);
    (ops, vec![3.0], AdvectedPair::at_rest(y, xi))
}

#[test]
fn regularized_states_approach_the_sharp_state() {
    let (ops, u, adv) = melting_bar();
    let sharp = solve_state(&ops, &u, &adv, &StateSolverOptions::default()).unwrap();
    let norm = sharp.y.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.1);
    let mut gaps = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let reg = solve_state_regularized(&ops, &u, &adv, eps, &RegularizedOptions::default()).unwrap();
        let gap = reg
            .y
            .iter()
            .zip(&sharp.y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        gaps.push(gap);
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] <= 1e-3 * norm, "{gaps:?}");
}

#[test]
fn enthalpy_is_conserved_without_flux() {
    let mesh = build_rectangle_mesh(1.0, 1.0, 8, 8, RectangleTags::uniform(BoundaryTag::Neumann)).unwrap();
    let ops = assemble_operators(&mesh, &Conductivity::Constant(1.0), 0.1).unwrap();
    assert_eq!(ops.n_controls(), 0);
    let y: Vec<f64> = mesh.coords().iter().map(|p| (1.0f64 - 2.0 * p[0]).max(0.0) * 2.0).collect();
    let xi: Vec<f64> = mesh.coords().iter().map(|p| if p[0] > 0.6 { 1.0 } else { 0.0 }).collect();
    let adv = AdvectedPair::at_rest(y.clone(), xi.clone());
    let s = solve_state(&ops, &[], &adv, &StateSolverOptions::default()).unwrap();
    let enthalpy = |y: &[f64], xi: &[f64]| -> f64 {
        ops.lumped_mass.iter().zip(y.iter().zip(xi)).map(|(l, (a, b))| l * (a - b)).sum()
    };
    let before = enthalpy(&y, &xi);
    let after = enthalpy(&s.y, &s.xi);
    assert!((before - after).abs() < 1e-12 * before.abs().max(1.0), "{before} {after}");
    // some ice melted
    assert!(s.xi.iter().sum::<f64>() < xi.iter().sum::<f64>());
}

#[test]
fn negative_controls_and_fractions_are_rejected() {
    let (ops, _, adv) = melting_bar();
    let err = solve_state(&ops, &[-1.0], &adv, &StateSolverOptions::default()).unwrap_err();
    assert!(matches!(err, Error::SignCondition { .. }), "{err}");
    let mut bad = adv.clone();
    bad.xi_bar[5] = 1.5;
    let err = solve_state(&ops, &[1.0], &bad, &StateSolverOptions::default()).unwrap_err();
    assert!(matches!(err, Error::SignCondition { .. }), "{err}");
}

#[test]
fn frozen_data_stays_frozen() {
    let (ops, _, _) = melting_bar();
    let n = ops.n_nodes();
    let adv = AdvectedPair::at_rest(vec![0.0; n], vec![1.0; n]);
    let s = solve_state(&ops, &[0.0], &adv, &StateSolverOptions::default()).unwrap();
    assert!(s.y.iter().all(|&v| v == 0.0));
    assert!(s.xi.iter().all(|&v| (v - 1.0).abs() < 1e-14));
}
