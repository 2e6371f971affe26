//! Cross-checks of the coordinate-descent solver against the independent
//! proximal-gradient reference, plus the solver's contract properties.

use fair_core::reference::proximal_gradient_solve;
use fair_core::solver::{
    kkt_violation, lambda_max, objective_value, solve, PenalizedProblem, PenaltyOrder,
    SolverSettings,
};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

struct InstanceConfig {
    max_n: usize,
    max_p: usize,
    allow_ridge: bool,
}

/// Random solver problem: mixed weights, mixed penalty factors (some
/// unpenalized), an optional intercept column, lambda drawn from
/// {0, moderate, near the entry threshold}.
fn random_problem(rng: &mut ChaCha8Rng, cfg: &InstanceConfig) -> PenalizedProblem {
    // keep n above p so the minimizer is unique and componentwise
    // comparisons are meaningful
    let p = rng.gen_range(1..=cfg.max_p);
    let n = rng.gen_range((p + 5)..=cfg.max_n);
    let with_intercept = rng.gen_bool(0.5);

    let mut design = Array2::zeros((n, p));
    for (j, mut col) in design.columns_mut().into_iter().enumerate() {
        if j == 0 && with_intercept {
            col.fill(1.0);
        } else {
            for v in col.iter_mut() {
                *v = rng.gen_range(-1.5..1.5);
            }
        }
    }
    let beta_true: Array1<f64> = (0..p)
        .map(|_| {
            if rng.gen_bool(0.4) {
                0.0
            } else {
                rng.gen_range(-2.0..2.0)
            }
        })
        .collect();
    let mut y = design.dot(&beta_true);
    for v in y.iter_mut() {
        *v += 0.3 * rng.gen_range(-1.0..1.0);
    }
    let w: Array1<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
    let pf: Array1<f64> = (0..p)
        .map(|j| {
            if j == 0 && with_intercept {
                0.0
            } else if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen_range(0.2..2.0)
            }
        })
        .collect();
    let order = if cfg.allow_ridge && rng.gen_bool(0.2) {
        PenaltyOrder::Ridge
    } else {
        PenaltyOrder::Lasso
    };
    let base = PenalizedProblem::new(design, y, w, pf, order, 0.0).unwrap();
    let lambda = if base.penalty_factor().iter().any(|&f| f > 0.0) {
        let lmax = lambda_max(&base).unwrap();
        match rng.gen_range(0..3) {
            0 => 0.0,
            1 => lmax * rng.gen_range(0.05..0.5),
            _ => lmax * rng.gen_range(0.9..1.1),
        }
    } else {
        0.0
    };
    base.with_lambda(lambda).unwrap()
}

#[test]
fn matches_proximal_gradient_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = InstanceConfig {
        max_n: 40,
        max_p: 8,
        allow_ridge: true,
    };
    let settings = SolverSettings::default();
    for trial in 0..50 {
        let problem = random_problem(&mut rng, &cfg);
        let (beta, diag) = solve(&problem, None, &settings, None).unwrap();
        assert!(diag.converged, "trial {trial} failed to converge");
        let oracle = proximal_gradient_solve(&problem, None, 1e-10, 500_000);
        for j in 0..problem.p() {
            assert!(
                (beta[j] - oracle[j]).abs() <= 1e-5,
                "trial {trial}, coef {j}: cd {} vs oracle {}",
                beta[j],
                oracle[j]
            );
        }
        // the oracle never lands on a lower objective than the solver
        // beyond its own tolerance
        let f_cd = objective_value(&problem, None, beta.view());
        let f_pg = objective_value(&problem, None, oracle.view());
        assert!(f_cd <= f_pg + 1e-8 * (1.0 + f_pg.abs()));
    }
}

#[test]
fn diagnostics_kkt_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = InstanceConfig {
        max_n: 40,
        max_p: 8,
        allow_ridge: true,
    };
    for _ in 0..30 {
        let problem = random_problem(&mut rng, &cfg);
        let (beta, diag) = solve(&problem, None, &SolverSettings::default(), None).unwrap();
        let recomputed = kkt_violation(&problem, None, beta.view());
        assert!(
            (diag.max_kkt_violation - recomputed).abs() <= 1e-12,
            "reported {} vs recomputed {recomputed}",
            diag.max_kkt_violation
        );
        let obj = objective_value(&problem, None, beta.view());
        assert!((diag.final_objective - obj).abs() <= 1e-12 * (1.0 + obj.abs()));
    }
}

#[test]
fn scale_equivariance_in_response_and_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = InstanceConfig {
        max_n: 30,
        max_p: 6,
        allow_ridge: false,
    };
    for _ in 0..20 {
        let problem = random_problem(&mut rng, &cfg);
        if problem.lambda() == 0.0 {
            continue;
        }
        let c = 3.7;
        let scaled = PenalizedProblem::new(
            problem.design().clone(),
            c * &problem.response().to_owned(),
            problem.sample_weight().to_owned(),
            problem.penalty_factor().to_owned(),
            problem.penalty_order(),
            c * problem.lambda(),
        )
        .unwrap();
        // solve well below the asserted 1e-8 so solver tolerance does not
        // masquerade as an equivariance violation
        let settings = SolverSettings {
            tolerance: 1e-11,
            kkt_tolerance: 1e-9,
            ..SolverSettings::default()
        };
        let (beta, _) = solve(&problem, None, &settings, None).unwrap();
        let (beta_scaled, _) = solve(&scaled, None, &settings, None).unwrap();
        for j in 0..problem.p() {
            assert!(
                (beta_scaled[j] - c * beta[j]).abs() <= 1e-8 * (1.0 + beta[j].abs()),
                "coef {j}: {} vs {}",
                beta_scaled[j],
                c * beta[j]
            );
        }
    }
}

#[test]
fn duplicated_row_with_halved_weights_is_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let cfg = InstanceConfig {
        max_n: 25,
        max_p: 6,
        allow_ridge: false,
    };
    for _ in 0..20 {
        let problem = random_problem(&mut rng, &cfg);
        let n = problem.n();
        let p = problem.p();
        let dup_row = 0usize;

        let mut design = Array2::zeros((n + 1, p));
        let mut y = Array1::zeros(n + 1);
        let mut w = Array1::zeros(n + 1);
        for i in 0..n {
            for j in 0..p {
                design[[i, j]] = problem.design()[[i, j]];
            }
            y[i] = problem.response()[i];
            w[i] = problem.sample_weight()[i];
        }
        for j in 0..p {
            design[[n, j]] = problem.design()[[dup_row, j]];
        }
        y[n] = problem.response()[dup_row];
        w[n] = problem.sample_weight()[dup_row] / 2.0;
        w[dup_row] /= 2.0;

        let folded = PenalizedProblem::new(
            design,
            y,
            w,
            problem.penalty_factor().to_owned(),
            problem.penalty_order(),
            problem.lambda(),
        )
        .unwrap();
        let settings = SolverSettings::default();
        let (a, _) = solve(&problem, None, &settings, None).unwrap();
        let (b, _) = solve(&folded, None, &settings, None).unwrap();
        for j in 0..p {
            assert!(
                (a[j] - b[j]).abs() <= 1e-10 * (1.0 + a[j].abs()),
                "coef {j}: {} vs {}",
                a[j],
                b[j]
            );
        }
    }
}

#[test]
fn warm_start_preserves_the_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    let cfg = InstanceConfig {
        max_n: 30,
        max_p: 8,
        allow_ridge: true,
    };
    let settings = SolverSettings::default();
    for _ in 0..20 {
        let problem = random_problem(&mut rng, &cfg);
        let (cold, _) = solve(&problem, None, &settings, None).unwrap();
        // warm-start from a perturbed point
        let warm: Array1<f64> = cold.iter().map(|&b| b + rng.gen_range(-0.5..0.5)).collect();
        let (rewarmed, _) = solve(&problem, None, &settings, Some(warm.view())).unwrap();
        for j in 0..problem.p() {
            assert!(
                (cold[j] - rewarmed[j]).abs() <= 10.0 * settings.tolerance,
                "coef {j}: cold {} vs warm {}",
                cold[j],
                rewarmed[j]
            );
        }
    }
}

#[test]
fn objective_never_exceeds_warm_start_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let cfg = InstanceConfig {
        max_n: 30,
        max_p: 6,
        allow_ridge: false,
    };
    for _ in 0..20 {
        let problem = random_problem(&mut rng, &cfg);
        let warm: Array1<f64> = (0..problem.p()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f_start = objective_value(&problem, None, warm.view());
        let (beta, diag) = solve(
            &problem,
            None,
            &SolverSettings::default(),
            Some(warm.view()),
        )
        .unwrap();
        let f_end = objective_value(&problem, None, beta.view());
        assert!(f_end <= f_start + 1e-12 * (1.0 + f_start.abs()));
        assert!((diag.final_objective - f_end).abs() <= 1e-12 * (1.0 + f_end.abs()));
    }
}
