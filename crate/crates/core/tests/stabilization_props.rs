mod common;

use nalgebra::DMatrix;
use nalgebra::DVector;
use proptest::prelude::*;
use sdnctl_core::{
    closed_loop_spectral_radius, dare_feasible, dare_solve, dle_solve, exact_moments,
    lyapunov_operator_eval, pmax_bisection, pmax_scalar_closed_form, DareOptions, DareOutcome,
    DareWeights, DiscretePlant, FlowSet, SimConfig,
};

fn discrete(a: DMatrix<f64>, b: DMatrix<f64>) -> DiscretePlant {
    DiscretePlant::new(a, b, 1.0).unwrap()
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    common::matrix(n, n, -1.0, 1.0)
        .prop_map(move |m| &m * m.transpose() + DMatrix::identity(n, n) * 0.1)
}

fn solve(
    plant: &DiscretePlant,
    d: u32,
    p: f64,
    w: &DareWeights,
) -> Option<sdnctl_core::DareSolution> {
    match dare_solve(plant, d, p, w, &DareOptions::default()) {
        Ok(DareOutcome::Stabilizable(s)) => Some(s),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gain_invariant_under_weight_scaling(
        (a, b) in common::plant_pair(),
        d in 1u32..=3,
        p in 0.0f64..0.05,
        alpha in prop_oneof![Just(0.1), Just(10.0), 0.2f64..5.0],
    ) {
        let plant = discrete(a, b);
        let w = DareWeights::identity(plant.state_dim(), plant.input_dim());
        let Some(base) = solve(&plant, d, p, &w) else { return Ok(()) };
        let scaled = solve(&plant, d, p, &w.scaled(alpha).unwrap()).expect("scaling keeps stabilizability");
        let k_err = (&scaled.k - &base.k).amax();
        let p_err = (&scaled.p - &base.p * alpha).amax();
        prop_assert!(k_err <= 1e-8 * base.k.amax().max(1.0), "K moved by {k_err}");
        prop_assert!(p_err <= 1e-8 * (alpha * base.p.amax()).max(1.0), "P off by {p_err}");
    }

    #[test]
    fn zero_dropout_matches_doubling_solver((a, b) in common::plant_pair(), d in 1u32..=3) {
        let plant = discrete(a.clone(), b.clone());
        let w = DareWeights::identity(plant.state_dim(), plant.input_dim());
        let Some(oracle) = common::doubling_riccati(&a, &b, w.q(), w.r()) else { return Ok(()) };
        prop_assume!(oracle.norm() < 1e6);
        let sol = solve(&plant, d, 0.0, &w).expect("oracle converged, so the pair is stabilizable");
        let err = (&sol.p - &oracle).amax();
        prop_assert!(err <= 1e-8 * oracle.amax().max(1.0), "P differs by {err}");
    }

    #[test]
    fn lyapunov_operator_is_linear(
        (plant, k, x, y) in common::dims().prop_flat_map(|(n, m)| (
            common::matrix(n, n, -1.0, 1.0),
            common::matrix(n, m, -1.0, 1.0),
            common::matrix(m, n, -1.0, 1.0),
            common::matrix(n, n, -2.0, 2.0),
            common::matrix(n, n, -2.0, 2.0),
        ).prop_map(|(a, b, k, x, y)| (discrete(a, b), k, x, y))),
        d in 1u32..=3,
        p in 0.0f64..=1.0,
        sa in -3.0f64..3.0,
        sb in -3.0f64..3.0,
    ) {
        let lhs = lyapunov_operator_eval(&plant, d, &k, p, &(&x * sa + &y * sb)).unwrap();
        let rhs = lyapunov_operator_eval(&plant, d, &k, p, &x).unwrap() * sa
            + lyapunov_operator_eval(&plant, d, &k, p, &y).unwrap() * sb;
        let scale = (x.amax() * sa.abs() + y.amax() * sb.abs()).max(1.0) * (1.0 + k.amax()).powi(2) * 16.0;
        prop_assert!((&lhs - &rhs).amax() <= 1e-12 * scale);
    }

    #[test]
    fn feasibility_predicate_is_monotone((a, b) in common::plant_pair(), d in 1u32..=3) {
        let plant = discrete(a, b);
        let w = DareWeights::identity(plant.state_dim(), plant.input_dim());
        let mut seen_infeasible = false;
        for i in 0..=20 {
            let p = f64::from(i) / 20.0;
            let ok = dare_feasible(&plant, d, p, &w, &DareOptions::default()).unwrap();
            prop_assert!(!(seen_infeasible && ok), "feasible again at p = {p}");
            seen_infeasible |= !ok;
        }
    }

    #[test]
    fn converged_gain_passes_lyapunov_test(
        (a, b) in common::plant_pair(),
        d in 1u32..=3,
        frac in 0.0f64..0.95,
        q_seed in 1usize..=3,
    ) {
        let plant = discrete(a, b);
        let n = plant.state_dim();
        let w = DareWeights::identity(n, plant.input_dim());
        let Ok(margin) = pmax_bisection(&plant, d, &w, 1e-4) else { return Ok(()) };
        let p = frac * (margin.p_max - 1e-4).max(0.0);
        let sol = solve(&plant, d, p, &w).expect("below the bisected threshold");
        let q = DMatrix::identity(n, n) * q_seed as f64;
        let dle = dle_solve(&plant, d, p, &sol.k, &q).unwrap();
        prop_assert!(dle.feasible, "rho = {}", dle.spectral_radius);
    }

    #[test]
    fn dle_and_lifted_moment_tests_agree(
        (a, b) in common::plant_pair(),
        d in 1u32..=3,
        p_design in 0.0f64..0.3,
        p_eval in 0.0f64..=1.0,
        q in (1usize..=3).prop_flat_map(spd),
    ) {
        let plant = discrete(a, b);
        let n = plant.state_dim();
        prop_assume!(q.nrows() == n);
        let w = DareWeights::identity(n, plant.input_dim());
        let Some(sol) = solve(&plant, d, p_design, &w) else { return Ok(()) };
        let dle = dle_solve(&plant, d, p_eval, &sol.k, &q).unwrap();
        let rho = closed_loop_spectral_radius(&plant, d, p_eval, &sol.k).unwrap();
        prop_assume!((rho - 1.0).abs() >= 1e-6 && (dle.spectral_radius - 1.0).abs() >= 1e-6);
        prop_assert_eq!(dle.feasible, rho < 1.0, "dle rho {} lifted rho {}", dle.spectral_radius, rho);
    }
}

#[test]
fn contracting_loops_drive_exact_moments_to_zero() {
    let plant = discrete(
        DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.0, 0.9]),
        DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
    );
    let w = DareWeights::identity(2, 1);
    for (d, p) in [(1u32, 0.05), (2, 0.1), (3, 0.02)] {
        let sol = solve(&plant, d, p, &w).unwrap();
        let dle = dle_solve(&plant, d, p, &sol.k, w.q()).unwrap();
        assert!(dle.feasible);
        let rate = -(p.ln()) / (f64::from(d) * 1.0);
        let cfg = SimConfig::new(
            plant.clone(),
            d,
            FlowSet::exponential(&[rate]).unwrap(),
            sol.k.clone(),
            2000,
            1,
            0,
            DVector::from_vec(vec![1.0, -1.0]),
        )
        .unwrap();
        assert!((cfg.dropout() - p).abs() < 1e-12);
        let m = exact_moments(&cfg).unwrap().mean_sq;
        assert!(m[2000] < 1e-12 * m[0], "d={d}: {}", m[2000]);
    }
}

#[test]
fn bisection_agrees_with_closed_form_grid() {
    let w = DareWeights::identity(1, 1);
    let tol = 1e-4;
    for a in [0.1f64, 0.25, 0.5, 0.75, 1.0, 1.2] {
        for h in [0.1f64, 0.25, 0.5, 0.75, 1.0] {
            let b = (a * h).exp_m1() / a;
            let plant = DiscretePlant::scalar((a * h).exp(), b, h).unwrap();
            for d in 1..=4 {
                let bis = pmax_bisection(&plant, d, &w, tol).unwrap().p_max;
                let closed = pmax_scalar_closed_form(a, h, d).unwrap();
                assert!(
                    (bis - closed).abs() <= 2.0 * tol,
                    "A={a} h={h} d={d}: {bis} vs {closed}"
                );
            }
        }
    }
}
