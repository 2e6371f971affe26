//! Nesting identities between the estimators and directly constructed
//! reference fits.

use std::collections::BTreeMap;

use fair_core::design::{assemble_penalty_factors, build_fair_design, split_coefficients};
use fair_core::models::{fit_fair, GroupedPredictor};
use fair_core::solver::{solve, PenalizedProblem, PenaltyOrder, SolverSettings};
use fair_core::GroupedDataset;
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn two_group_data(seed: u64, n_a: usize, n_b: usize, m: usize) -> GroupedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_a + n_b;
    let mut x = Array2::zeros((n, m));
    for v in x.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut y = Array1::zeros(n);
    let mut labels = Vec::new();
    for i in 0..n {
        let group_b = i >= n_a;
        let mut pred = 0.0;
        for j in 0..m {
            let coef = if group_b { 1.0 + 0.5 * j as f64 } else { 1.0 };
            pred += coef * x[[i, j]];
        }
        y[i] = pred + 0.1 * rng.gen_range(-1.0..1.0);
        labels.push(if group_b { "b".to_string() } else { "a".to_string() });
    }
    GroupedDataset::new(x, y, &labels).unwrap()
}

#[test]
fn saturating_one_group_penalty_zeroes_only_that_block() {
    let data = two_group_data(1, 40, 20, 4);
    let mut lambdas = BTreeMap::new();
    lambdas.insert("a".to_string(), 0.02);
    lambdas.insert("b".to_string(), 1e9);
    let model = fit_fair(&data, &lambdas, &SolverSettings::default()).unwrap();
    let b = &model.groups["b"];
    assert!(b.weights.iter().all(|&w| w == 0.0));
    assert_eq!(b.intercept, 0.0);
    assert!(model.base.weights.iter().any(|&w| w != 0.0));
}

#[test]
fn fair_with_saturated_group_blocks_equals_weighted_base_only_lasso() {
    let data = two_group_data(2, 50, 25, 5);
    let lambda_base = 0.05;
    let mut lambdas = BTreeMap::new();
    lambdas.insert("a".to_string(), lambda_base);
    lambdas.insert("b".to_string(), 1e9);
    let model = fit_fair(&data, &lambdas, &SolverSettings::default()).unwrap();

    // the same problem restricted to [intercept | base covariates], with the
    // interaction design's weights and scaling
    let design = build_fair_design(&data, None).unwrap();
    let m = data.m();
    let std = design.scaling.apply(data.features());
    let mut base_design = Array2::zeros((data.n(), 1 + m));
    for i in 0..data.n() {
        base_design[[i, 0]] = 1.0;
        for j in 0..m {
            base_design[[i, 1 + j]] = std[[i, j]];
        }
    }
    let mut factors = Array1::from_elem(1 + m, lambda_base);
    factors[0] = 0.0;
    let problem = PenalizedProblem::new(
        base_design,
        data.outcome().to_owned(),
        design.sample_weight.clone(),
        factors,
        PenaltyOrder::Lasso,
        1.0,
    )
    .unwrap();
    let (flat, _) = solve(&problem, None, &SolverSettings::default(), None).unwrap();
    let std_block = fair_core::CoefficientBlock::new(
        flat[0],
        flat.iter().skip(1).copied().collect(),
        vec![true; m],
    );
    let base_only = design.scaling.unscale_block(&std_block);

    assert!((model.base.intercept - base_only.intercept).abs() <= 1e-6);
    for j in 0..m {
        assert!(
            (model.base.weights[j] - base_only.weights[j]).abs() <= 1e-6,
            "coef {j}: fair {} vs base-only {}",
            model.base.weights[j],
            base_only.weights[j]
        );
    }
}

#[test]
fn split_coefficients_round_trips_through_the_fit() {
    let data = two_group_data(3, 30, 18, 3);
    let design = build_fair_design(&data, None).unwrap();
    let mut lambdas = BTreeMap::new();
    lambdas.insert("a".to_string(), 0.03);
    lambdas.insert("b".to_string(), 0.06);
    let (_, factors) = assemble_penalty_factors(&design, &lambdas).unwrap();
    let problem = PenalizedProblem::new(
        design.expanded.clone(),
        data.outcome().to_owned(),
        design.sample_weight.clone(),
        factors,
        PenaltyOrder::Lasso,
        1.0,
    )
    .unwrap();
    let (flat, _) = solve(&problem, None, &SolverSettings::default(), None).unwrap();
    let blocks = split_coefficients(&design, flat.view()).unwrap();
    let back = fair_core::design::flatten_coefficients(&design, &blocks);
    assert_eq!(flat, back);
}

#[test]
fn fair_predictions_respect_group_composition() {
    // prediction for a group-b sample equals base-block prediction plus the
    // b block applied to the same covariates, on the original scale
    let data = two_group_data(4, 35, 22, 4);
    let mut lambdas = BTreeMap::new();
    lambdas.insert("a".to_string(), 0.02);
    lambdas.insert("b".to_string(), 0.04);
    let model = fit_fair(&data, &lambdas, &SolverSettings::default()).unwrap();

    let x = data.features();
    let preds = model.predict_dataset(&data).unwrap();
    for i in 0..data.n() {
        let mut expect = model.base.intercept;
        for j in 0..data.m() {
            expect += model.base.weights[j] * x[[i, j]];
        }
        if data.group_label(i) == "b" {
            let b = &model.groups["b"];
            expect += b.intercept;
            for j in 0..data.m() {
                expect += b.weights[j] * x[[i, j]];
            }
        }
        assert!((preds[i] - expect).abs() <= 1e-12);
    }
}
