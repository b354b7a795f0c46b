use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use subgrad_sysid::baseline::lse_fit;
use subgrad_sysid::linalg::frobenius_inner;
use subgrad_sysid::objective::{
    evaluate, objective_value, residuals, subgradient, KinkRule, ObjectiveCache, SubgradientSelection,
};
use subgrad_sysid::rng;
use subgrad_sysid::sim::{generate_system, simulate, DisturbanceModel, Trajectory};
use subgrad_sysid::solver::{step, EstimatorState, InitRule, Oracle};
use subgrad_sysid::stepsize::{backtracking_step, BacktrackingParams, StepSizePolicy};

/// Arbitrary states; the objective does not care whether they follow a
/// system.
fn random_trajectory(n: usize, periods: usize, seed: u64) -> Trajectory {
    let mut r = rng::seeded(seed);
    let states = (0..=periods).map(|_| rng::gaussian_vector(&mut r, n)).collect();
    let disturbances = (0..periods).map(|_| DVector::zeros(n)).collect();
    Trajectory::new(states, disturbances).unwrap()
}

fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
    rng::gaussian_matrix(&mut rng::seeded(seed), n, n)
}

fn scale(a: &DMatrix<f64>, traj: &Trajectory, periods: usize) -> f64 {
    let s: f64 = (0..=periods).map(|t| traj.state(t).norm()).sum();
    1.0 + s * (1.0 + a.norm())
}

fn simulated(n: usize, p: f64, seed: u64, horizon: usize) -> (DMatrix<f64>, Trajectory) {
    let sys = generate_system(n, seed).unwrap();
    let model = DisturbanceModel::for_dimension(n, p, seed ^ 0x5a5a).unwrap();
    let traj = simulate(&sys, &model, &DVector::zeros(n), horizon).unwrap();
    (sys.a_true().clone(), traj)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_is_convex(n in 1usize..5, periods in 1usize..30, seed: u64, theta in 0.0f64..1.0) {
        let traj = random_trajectory(n, periods, seed);
        let a = random_matrix(n, seed ^ 1);
        let b = random_matrix(n, seed ^ 2);
        let mix = &a * theta + &b * (1.0 - theta);
        let lhs = objective_value(&mix, &traj, periods).unwrap();
        let rhs = theta * objective_value(&a, &traj, periods).unwrap()
            + (1.0 - theta) * objective_value(&b, &traj, periods).unwrap();
        prop_assert!(lhs <= rhs + 1e-12 * scale(&(&a + &b), &traj, periods));
    }

    #[test]
    fn subgradient_inequality(n in 1usize..5, periods in 1usize..30, seed: u64) {
        let traj = random_trajectory(n, periods, seed);
        let a = random_matrix(n, seed ^ 3);
        let b = random_matrix(n, seed ^ 4);
        let e = evaluate(&a, &traj, periods, &SubgradientSelection::default()).unwrap();
        let fb = objective_value(&b, &traj, periods).unwrap();
        let bound = e.value + frobenius_inner(&e.subgradient, &(&b - &a));
        prop_assert!(fb >= bound - 1e-12 * scale(&(&a + &b), &traj, periods));
    }

    #[test]
    fn subgradient_inequality_at_kinks(n in 1usize..5, seed: u64, pick in any::<[f64; 4]>()) {
        // Noiseless data makes every residual vanish at the truth.
        let a_true = generate_system(n, seed).unwrap().a_true().clone();
        let mut states = vec![rng::unit_sphere(&mut rng::seeded(seed), n)];
        for t in 0..12 {
            states.push(&a_true * &states[t]);
        }
        let traj = Trajectory::new(states, vec![DVector::zeros(n); 12]).unwrap();
        let raw = DVector::from_iterator(n, pick.iter().take(n).map(|v| if v.is_finite() { v.tanh() } else { 0.0 }));
        let e = if raw.norm() > 1.0 { &raw / raw.norm() } else { raw };
        let sel = SubgradientSelection::new(KinkRule::Custom(e), 1e-12).unwrap();
        let g = subgradient(&a_true, &traj, 12, &sel).unwrap();
        let f0 = objective_value(&a_true, &traj, 12).unwrap();
        let b = &a_true + random_matrix(n, seed ^ 5) * 0.3;
        let fb = objective_value(&b, &traj, 12).unwrap();
        prop_assert!(fb >= f0 + frobenius_inner(&g, &(&b - &a_true)) - 1e-9);
    }

    #[test]
    fn subgradient_norm_is_bounded(n in 1usize..5, periods in 1usize..30, seed: u64) {
        let traj = random_trajectory(n, periods, seed);
        let a = random_matrix(n, seed ^ 6);
        let g = subgradient(&a, &traj, periods, &SubgradientSelection::default()).unwrap();
        let bound: f64 = (0..periods).map(|t| traj.state(t).norm()).sum();
        prop_assert!(g.norm() <= bound + 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences(n in 1usize..4, periods in 1usize..15, seed: u64) {
        let traj = random_trajectory(n, periods, seed);
        let a = random_matrix(n, seed ^ 7);
        let res = residuals(&a, &traj, periods).unwrap();
        prop_assume!(res.iter().all(|r| r.norm > 1e-3));
        let g = subgradient(&a, &traj, periods, &SubgradientSelection::default()).unwrap();
        let h = 1e-6;
        for i in 0..n {
            for j in 0..n {
                let mut plus = a.clone();
                plus[(i, j)] += h;
                let mut minus = a.clone();
                minus[(i, j)] -= h;
                let fd = (objective_value(&plus, &traj, periods).unwrap()
                    - objective_value(&minus, &traj, periods).unwrap()) / (2.0 * h);
                let err = (fd - g[(i, j)]).abs() / g[(i, j)].abs().max(1e-2);
                prop_assert!(err <= 1e-4, "entry ({i},{j}): fd {fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn best_step_contraction_identity(n in 1usize..5, seed: u64, p in 0.1f64..0.9) {
        let (a_true, traj) = simulated(n, p, seed, 60);
        let cache = ObjectiveCache::from_states(traj.states()).unwrap();
        let mut state = EstimatorState::init(n, InitRule::GaussianScaled(1.0), seed).unwrap();
        for t in 1..60 {
            let before = &state.a_hat - &a_true;
            let e = cache.evaluate(&state.a_hat, t, &SubgradientSelection::default()).unwrap();
            let f_true = cache.value(&a_true, t).unwrap();
            step(&mut state, &cache, &StepSizePolicy::Best, &SubgradientSelection::default(),
                 Oracle::Known { a_true: &a_true, f_true }).unwrap();
            let after = (&state.a_hat - &a_true).norm_squared();
            let g2 = e.subgradient.norm_squared();
            let expected = if g2 > 0.0 {
                before.norm_squared() - frobenius_inner(&e.subgradient, &before).powi(2) / g2
            } else {
                before.norm_squared()
            };
            // Forming Â − Ā costs about ε‖Ā‖ absolute error per entry.
            let round = 8.0 * f64::EPSILON * (1.0 + a_true.norm()) * before.norm();
            prop_assert!((after - expected).abs() <= 1e-9 * before.norm_squared() + round,
                "t={t}: {after} vs {expected}");
            prop_assert!(after.sqrt() <= before.norm() + 1e-12);
        }
    }

    #[test]
    fn polyak_does_not_move_away(n in 1usize..5, seed: u64, p in 0.1f64..0.9) {
        let (a_true, traj) = simulated(n, p, seed, 60);
        let cache = ObjectiveCache::from_states(traj.states()).unwrap();
        let mut state = EstimatorState::init(n, InitRule::GaussianScaled(1.0), seed).unwrap();
        for t in 1..60 {
            let before = (&state.a_hat - &a_true).norm();
            let f_true = cache.value(&a_true, t).unwrap();
            let rec = step(&mut state, &cache, &StepSizePolicy::Polyak, &SubgradientSelection::default(),
                           Oracle::Known { a_true: &a_true, f_true }).unwrap();
            if rec.loss_gap >= 0.0 {
                prop_assert!((&state.a_hat - &a_true).norm() <= before + 1e-12);
            }
        }
    }

    #[test]
    fn armijo_condition_holds_when_accepted(n in 1usize..5, periods in 1usize..20, seed: u64) {
        let traj = random_trajectory(n, periods, seed);
        let a = random_matrix(n, seed ^ 8);
        let e = evaluate(&a, &traj, periods, &SubgradientSelection::default()).unwrap();
        prop_assume!(e.subgradient.norm() > 0.0);
        let params = BacktrackingParams::default();
        let out = backtracking_step(|b| objective_value(b, &traj, periods).unwrap(), &a, e.value, &e.subgradient, &params).unwrap();
        let trial = &a - &e.subgradient * out.beta;
        let f_new = objective_value(&trial, &traj, periods).unwrap();
        if !out.no_descent {
            prop_assert!(f_new <= e.value - params.armijo_c * out.beta * e.subgradient.norm_squared());
        }
        prop_assert!(out.evaluations <= params.max_halvings + 1);
    }

    #[test]
    fn lse_normal_equations(n in 1usize..5, seed: u64, p in 0.1f64..0.9, ridge in prop_oneof![Just(0.0), 0.0f64..1.0]) {
        let (_, traj) = simulated(n, p, seed, 80);
        let fit = lse_fit(&traj, 80, ridge).unwrap();
        let mut cross = DMatrix::<f64>::zeros(n, n);
        let mut gram = DMatrix::<f64>::identity(n, n) * ridge;
        let mut size = 0.0;
        for t in 0..80 {
            cross += traj.state(t + 1) * traj.state(t).transpose();
            gram += traj.state(t) * traj.state(t).transpose();
            size += traj.state(t).norm_squared() + traj.state(t + 1).norm() * traj.state(t).norm();
        }
        prop_assume!(!fit.regularized);
        let resid = (&cross - &fit.a_lse * &gram).norm();
        prop_assert!(resid <= 1e-8 * (1.0 + size), "{resid}");
    }

    #[test]
    fn lse_is_a_squared_loss_minimum(n in 1usize..4, seed: u64) {
        let (_, traj) = simulated(n, 0.5, seed, 60);
        let fit = lse_fit(&traj, 60, 0.0).unwrap();
        prop_assume!(!fit.regularized);
        let sq = |a: &DMatrix<f64>| -> f64 {
            residuals(a, &traj, 60).unwrap().iter().map(|r| r.norm * r.norm).sum()
        };
        let base = sq(&fit.a_lse);
        for k in 0..5u64 {
            let pert = random_matrix(n, seed ^ (100 + k)) * 1e-3;
            prop_assert!(sq(&(&fit.a_lse + pert)) >= base - 1e-12 * (1.0 + base));
        }
    }

    #[test]
    fn trajectory_csv_round_trip(n in 1usize..5, seed: u64, p in 0.05f64..0.95, horizon in 1usize..40) {
        let (_, traj) = simulated(n, p, seed, horizon);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        prop_assert_eq!(back, traj);
    }
}

#[test]
fn noiseless_lse_is_exact() {
    for seed in 0..10 {
        let n = 3;
        let sys = generate_system(n, seed).unwrap();
        let mut r = rng::seeded(seed);
        let mut states = vec![rng::gaussian_vector(&mut r, n)];
        for t in 0..n + 2 {
            let next = sys.a_true() * &states[t];
            states.push(next);
        }
        let traj = Trajectory::new(states, vec![DVector::zeros(n); n + 2]).unwrap();
        let fit = lse_fit(&traj, n + 2, 0.0).unwrap();
        if fit.gram_condition < 1e8 {
            assert!((&fit.a_lse - sys.a_true()).norm() <= 1e-8, "seed {seed}");
        }
    }
}
