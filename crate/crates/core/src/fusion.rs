//! Joint lasso: per-group coefficient vectors with L1 sparsity and a
//! pairwise L2 fusion penalty pulling groups toward each other.
//!
//! The objective, summed over groups `k` with unordered pairs counted once:
//!
//! ```text
//!   (1/n_k) ||y_k - X_k b_k||^2 + lambda ||b_k||_1
//!     + gamma * sum_{k' > k} tau_{k,k'} ||b_k - b_{k'}||^2
//! ```
//!
//! Each group also gets an unpenalized, unfused intercept. The fusion term
//! enters the solver as an exact smooth quadratic on the stacked block
//! design; coordinates of the same covariate across groups form one coupled
//! class and are updated jointly, so large `gamma` ties the blocks without
//! stalling the sweep.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientBlock, FitDiagnostics, GroupedDataset};
use crate::design::Scaling;
use crate::error::{Error, Result};
use crate::models::{GroupedPredictor, UnseenGroupPolicy};
use crate::solver::{
    solve, PenalizedProblem, PenaltyOrder, SmoothQuadraticTerm, SolverSettings,
};

/// Hyperparameters of the joint lasso. `tau = None` means all-ones
/// off-diagonal pairwise weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointLassoSpec {
    pub lambda: f64,
    pub gamma: f64,
    pub tau: Option<Vec<Vec<f64>>>,
}

impl JointLassoSpec {
    pub fn new(lambda: f64, gamma: f64) -> Self {
        Self {
            lambda,
            gamma,
            tau: None,
        }
    }

    pub fn with_tau(lambda: f64, gamma: f64, tau: Vec<Vec<f64>>) -> Self {
        Self {
            lambda,
            gamma,
            tau: Some(tau),
        }
    }

    /// Checks invariants and materializes the K x K pairwise weight matrix.
    pub fn materialize_tau(&self, k: usize) -> Result<Array2<f64>> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument("gamma must be >= 0".into()));
        }
        match &self.tau {
            None => {
                let mut tau = Array2::ones((k, k));
                for i in 0..k {
                    tau[[i, i]] = 0.0;
                }
                Ok(tau)
            }
            Some(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::ShapeMismatch(format!(
                        "tau must be {k} x {k} for {k} groups"
                    )));
                }
                let mut tau = Array2::zeros((k, k));
                for i in 0..k {
                    for j in 0..k {
                        let v = rows[i][j];
                        if !(v >= 0.0) || !v.is_finite() {
                            return Err(Error::InvalidArgument(
                                "tau entries must be nonnegative and finite".into(),
                            ));
                        }
                        tau[[i, j]] = v;
                    }
                    if tau[[i, i]] != 0.0 {
                        return Err(Error::InvalidArgument(
                            "tau must have a zero diagonal".into(),
                        ));
                    }
                }
                for i in 0..k {
                    for j in (i + 1)..k {
                        if (tau[[i, j]] - tau[[j, i]]).abs() > 1e-10 {
                            return Err(Error::InvalidArgument(format!(
                                "tau not symmetric at ({i}, {j})"
                            )));
                        }
                    }
                }
                Ok(tau)
            }
        }
    }
}

/// Fitted joint lasso: one coefficient block per group, original scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointLassoModel {
    pub blocks: BTreeMap<String, CoefficientBlock>,
    pub spec: JointLassoSpec,
    pub scaling: Scaling,
    pub diagnostics: FitDiagnostics,
    pub feature_names: Vec<String>,
}

impl GroupedPredictor for JointLassoModel {
    fn predict_with(
        &self,
        features: ArrayView2<'_, f64>,
        groups: &[String],
        _policy: UnseenGroupPolicy,
    ) -> Result<Array1<f64>> {
        let m = self
            .blocks
            .values()
            .next()
            .map_or(0, |b| b.num_weights());
        if features.ncols() != m {
            return Err(Error::ShapeMismatch(format!(
                "model was trained on {m} covariates, got {}",
                features.ncols()
            )));
        }
        let mut out = Array1::zeros(features.nrows());
        for (i, gid) in groups.iter().enumerate() {
            // like the separate-models baseline, there is no shared block to
            // fall back on for unseen groups
            let block = self
                .blocks
                .get(gid)
                .ok_or_else(|| Error::UnknownGroup(gid.clone()))?;
            let x = features.row(i);
            let mut pred = block.intercept;
            for (j, &xj) in x.iter().enumerate() {
                pred += block.weights[j] * xj;
            }
            out[i] = pred;
        }
        Ok(out)
    }
}

/// The stacked solver inputs behind a joint-lasso fit; reused by tuning for
/// pathwise warm starts.
pub(crate) struct JointProblem {
    pub problem: PenalizedProblem,
    pub extra: Option<SmoothQuadraticTerm>,
    pub scaling: Scaling,
    pub groups: Vec<String>,
}

pub(crate) fn build_joint_problem(
    data: &GroupedDataset,
    spec: &JointLassoSpec,
) -> Result<JointProblem> {
    for (gid, &nk) in data.group_ids().iter().zip(data.group_sizes()) {
        if nk < 2 {
            return Err(Error::GroupTooSmall {
                group: gid.clone(),
                size: nk,
                needed: 2,
            });
        }
    }
    let k = data.num_groups();
    let m = data.m();
    let tau = spec.materialize_tau(k)?;

    let sample_weight: Array1<f64> = data
        .group_index()
        .iter()
        .map(|&g| 1.0 / data.group_sizes()[g] as f64)
        .collect();
    // shared scaling across groups, as in the interaction design
    let scaling = Scaling::weighted(data.features(), sample_weight.view());
    let std = scaling.apply(data.features());

    let block = 1 + m;
    let p = k * block;
    let mut design = Array2::zeros((data.n(), p));
    for i in 0..data.n() {
        let g = data.group_index()[i];
        let offset = g * block;
        design[[i, offset]] = 1.0;
        for j in 0..m {
            design[[i, offset + 1 + j]] = std[[i, j]];
        }
    }
    let mut penalty_factor = Array1::ones(p);
    for g in 0..k {
        penalty_factor[g * block] = 0.0;
    }
    let problem = PenalizedProblem::new(
        design,
        data.outcome().to_owned(),
        sample_weight,
        penalty_factor,
        PenaltyOrder::Lasso,
        spec.lambda,
    )?;

    let extra = if spec.gamma > 0.0 && k > 1 && tau.iter().any(|&t| t > 0.0) {
        let mut q = Array2::zeros((p, p));
        for j in 0..m {
            for a in 0..k {
                let col_a = a * block + 1 + j;
                let mut diag = 0.0;
                for b in 0..k {
                    if a == b {
                        continue;
                    }
                    let t = spec.gamma * tau[[a, b]];
                    diag += t;
                    q[[col_a, b * block + 1 + j]] = -t;
                }
                q[[col_a, col_a]] = diag;
            }
        }
        Some(SmoothQuadraticTerm::new(q, None)?)
    } else {
        None
    };

    Ok(JointProblem {
        problem,
        extra,
        scaling,
        groups: data.group_ids().to_vec(),
    })
}

pub(crate) fn model_from_flat(
    joint: &JointProblem,
    spec: &JointLassoSpec,
    feature_names: &[String],
    flat: &Array1<f64>,
    diagnostics: FitDiagnostics,
) -> JointLassoModel {
    let m = joint.scaling.m();
    let block = 1 + m;
    let mut blocks = BTreeMap::new();
    for (g, gid) in joint.groups.iter().enumerate() {
        let offset = g * block;
        let std_block = CoefficientBlock::new(
            flat[offset],
            flat.iter().skip(offset + 1).take(m).copied().collect(),
            vec![true; m],
        );
        blocks.insert(gid.clone(), joint.scaling.unscale_block(&std_block));
    }
    JointLassoModel {
        blocks,
        spec: spec.clone(),
        scaling: joint.scaling.clone(),
        diagnostics,
        feature_names: feature_names.to_vec(),
    }
}

/// Fits the joint lasso by coordinate descent on the stacked block design
/// with the fusion quadratic injected into the smooth part.
pub fn fit_joint(
    data: &GroupedDataset,
    spec: &JointLassoSpec,
    settings: &SolverSettings,
) -> Result<JointLassoModel> {
    fit_joint_impl(data, spec, settings, None).map(|(m, _)| m)
}

pub(crate) fn fit_joint_impl(
    data: &GroupedDataset,
    spec: &JointLassoSpec,
    settings: &SolverSettings,
    warm: Option<&Array1<f64>>,
) -> Result<(JointLassoModel, Array1<f64>)> {
    let joint = build_joint_problem(data, spec)?;
    let (flat, diagnostics) = solve(
        &joint.problem,
        joint.extra.as_ref(),
        settings,
        warm.map(|w| w.view()),
    )?;
    let model = model_from_flat(&joint, spec, data.feature_names(), &flat, diagnostics);
    Ok((model, flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::objective_value;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    fn random_grouped(
        rng: &mut ChaCha8Rng,
        sizes: &[(&str, usize)],
        m: usize,
    ) -> GroupedDataset {
        let n: usize = sizes.iter().map(|s| s.1).sum();
        let mut x = Array2::zeros((n, m));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut lbl = Vec::new();
        let mut y = Array1::zeros(n);
        let mut row = 0;
        for (gi, (name, count)) in sizes.iter().enumerate() {
            let beta: Array1<f64> = (0..m)
                .map(|j| if j % 2 == gi % 2 { 1.0 } else { -0.5 })
                .collect();
            for _ in 0..*count {
                y[row] = x.row(row).dot(&beta) + 0.05 * rng.gen_range(-1.0..1.0);
                lbl.push(name.to_string());
                row += 1;
            }
        }
        GroupedDataset::new(x, y, &lbl).unwrap()
    }

    #[test]
    fn gamma_zero_separates_into_group_lassos() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = random_grouped(&mut rng, &[("a", 30), ("b", 14)], 4);
        let spec = JointLassoSpec::new(0.08, 0.0);
        let model = fit_joint(&data, &spec, &settings()).unwrap();

        // shared scaling, per-group weighted lasso at the same lambda
        let joint = build_joint_problem(&data, &spec).unwrap();
        let std = joint.scaling.apply(data.features());
        for (g, gid) in data.group_ids().iter().enumerate() {
            let rows = data.group_rows(g);
            let nk = rows.len() as f64;
            let mut sub = Array2::zeros((rows.len(), 5));
            let mut y = Array1::zeros(rows.len());
            for (i, &r) in rows.iter().enumerate() {
                sub[[i, 0]] = 1.0;
                for j in 0..4 {
                    sub[[i, 1 + j]] = std[[r, j]];
                }
                y[i] = data.outcome()[r];
            }
            let problem = PenalizedProblem::new(
                sub,
                y,
                Array1::from_elem(rows.len(), 1.0 / nk),
                ndarray::array![0.0, 1.0, 1.0, 1.0, 1.0],
                PenaltyOrder::Lasso,
                spec.lambda,
            )
            .unwrap();
            let (flat, _) = solve(&problem, None, &settings(), None).unwrap();
            let std_block = CoefficientBlock::new(
                flat[0],
                flat.iter().skip(1).copied().collect(),
                vec![true; 4],
            );
            let expect = joint.scaling.unscale_block(&std_block);
            let got = &model.blocks[gid];
            assert_abs_diff_eq!(got.intercept, expect.intercept, epsilon = 1e-6);
            for j in 0..4 {
                assert_abs_diff_eq!(got.weights[j], expect.weights[j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn huge_gamma_ties_blocks_to_common_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let data = random_grouped(&mut rng, &[("a", 40), ("b", 20)], 3);
        let lambda = 0.05;
        let spec = JointLassoSpec::new(lambda, 1e8);
        let model = fit_joint(&data, &spec, &settings()).unwrap();

        let a = &model.blocks["a"];
        let b = &model.blocks["b"];
        for j in 0..3 {
            assert!(
                (a.weights[j] - b.weights[j]).abs() <= 1e-4,
                "slopes not tied at {j}: {} vs {}",
                a.weights[j],
                b.weights[j]
            );
        }

        // tied limit: per-group intercepts, common slopes, K*lambda penalty
        let joint = build_joint_problem(&data, &spec).unwrap();
        let std = joint.scaling.apply(data.features());
        let n = data.n();
        let mut design = Array2::zeros((n, 2 + 3));
        for i in 0..n {
            let g = data.group_index()[i];
            design[[i, g]] = 1.0;
            for j in 0..3 {
                design[[i, 2 + j]] = std[[i, j]];
            }
        }
        let weights: Array1<f64> = data
            .group_index()
            .iter()
            .map(|&g| 1.0 / data.group_sizes()[g] as f64)
            .collect();
        let problem = PenalizedProblem::new(
            design,
            data.outcome().to_owned(),
            weights,
            ndarray::array![0.0, 0.0, 2.0, 2.0, 2.0],
            PenaltyOrder::Lasso,
            lambda,
        )
        .unwrap();
        let (flat, _) = solve(&problem, None, &settings(), None).unwrap();
        let tied = CoefficientBlock::new(
            0.0,
            flat.iter().skip(2).copied().collect(),
            vec![true; 3],
        );
        let tied = joint.scaling.unscale_block(&tied);
        for j in 0..3 {
            assert!(
                (a.weights[j] - tied.weights[j]).abs() <= 1e-4,
                "tied slope {j}: joint {} vs direct {}",
                a.weights[j],
                tied.weights[j]
            );
        }
    }

    #[test]
    fn gamma_tau_product_is_the_only_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = random_grouped(&mut rng, &[("a", 25), ("b", 15)], 3);
        let one = JointLassoSpec::with_tau(0.1, 0.4, vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
        let two = JointLassoSpec::with_tau(0.1, 0.8, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let ma = fit_joint(&data, &one, &settings()).unwrap();
        let mb = fit_joint(&data, &two, &settings()).unwrap();
        for gid in ["a", "b"] {
            let (a, b) = (&ma.blocks[gid], &mb.blocks[gid]);
            assert_abs_diff_eq!(a.intercept, b.intercept, epsilon = 1e-12);
            for j in 0..3 {
                assert_abs_diff_eq!(a.weights[j], b.weights[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn permuting_group_labels_permutes_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let data = random_grouped(&mut rng, &[("a", 18), ("b", 26), ("c", 12)], 3);
        let tau = vec![
            vec![0.0, 1.0, 0.5],
            vec![1.0, 0.0, 2.0],
            vec![0.5, 2.0, 0.0],
        ];
        let spec = JointLassoSpec::with_tau(0.05, 0.3, tau);
        let model = fit_joint(&data, &spec, &settings()).unwrap();

        // reorder rows so groups appear (c, a, b); permute tau to match
        let mut order: Vec<usize> = Vec::new();
        for want in ["c", "a", "b"] {
            let g = data.group_position(want).unwrap();
            order.extend_from_slice(data.group_rows(g));
        }
        let permuted = data.restrict_rows(&order).unwrap();
        assert_eq!(permuted.group_ids(), &["c", "a", "b"]);
        let perm = [2usize, 0, 1]; // original index of each new position
        let mut tau2 = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                tau2[i][j] = spec.materialize_tau(3).unwrap()[[perm[i], perm[j]]];
            }
        }
        let spec2 = JointLassoSpec::with_tau(0.05, 0.3, tau2);
        let model2 = fit_joint(&permuted, &spec2, &settings()).unwrap();

        for gid in ["a", "b", "c"] {
            let (x, y) = (&model.blocks[gid], &model2.blocks[gid]);
            assert_abs_diff_eq!(x.intercept, y.intercept, epsilon = 1e-6);
            for j in 0..3 {
                assert_abs_diff_eq!(x.weights[j], y.weights[j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn reported_objective_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let data = random_grouped(&mut rng, &[("a", 30), ("b", 16)], 4);
        let spec = JointLassoSpec::new(0.1, 0.7);
        let joint = build_joint_problem(&data, &spec).unwrap();
        let (flat, diag) = solve(&joint.problem, joint.extra.as_ref(), &settings(), None).unwrap();

        // independent evaluation of the stacked objective
        let std = joint.scaling.apply(data.features());
        let m = 4;
        let mut direct = 0.0;
        let block_of = |g: usize, flat: &Array1<f64>| {
            let off = g * (1 + m);
            (flat[off], (0..m).map(|j| flat[off + 1 + j]).collect::<Vec<f64>>())
        };
        for (g, _) in data.group_ids().iter().enumerate() {
            let rows = data.group_rows(g);
            let nk = rows.len() as f64;
            let (int, w) = block_of(g, &flat);
            let mut rss = 0.0;
            for &r in rows {
                let mut pred = int;
                for j in 0..m {
                    pred += w[j] * std[[r, j]];
                }
                let e = data.outcome()[r] - pred;
                rss += e * e;
            }
            direct += rss / nk;
            direct += spec.lambda * w.iter().map(|v| v.abs()).sum::<f64>();
        }
        for a in 0..2 {
            for b in (a + 1)..2 {
                let (_, wa) = block_of(a, &flat);
                let (_, wb) = block_of(b, &flat);
                let d2: f64 = wa
                    .iter()
                    .zip(&wb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                direct += spec.gamma * d2;
            }
        }
        assert!(
            (direct - diag.final_objective).abs() <= 1e-8 * direct.max(1.0),
            "direct {direct} vs reported {}",
            diag.final_objective
        );
        // and the solver's evaluator agrees with its own report exactly
        let via_helper = objective_value(&joint.problem, joint.extra.as_ref(), flat.view());
        assert_eq!(via_helper, diag.final_objective);
    }

    #[test]
    fn spec_validation_rejects_bad_tau() {
        let asym = JointLassoSpec::with_tau(0.1, 0.2, vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert!(asym.materialize_tau(2).is_err());
        let diag = JointLassoSpec::with_tau(0.1, 0.2, vec![vec![1.0, 1.0], vec![1.0, 0.0]]);
        assert!(diag.materialize_tau(2).is_err());
        let wrong = JointLassoSpec::with_tau(0.1, 0.2, vec![vec![0.0]]);
        assert!(wrong.materialize_tau(2).is_err());
        let neg = JointLassoSpec::new(-0.1, 0.0);
        assert!(neg.materialize_tau(2).is_err());
    }

    #[test]
    fn tiny_group_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let data = random_grouped(&mut rng, &[("a", 10), ("b", 1)], 2);
        assert!(matches!(
            fit_joint(&data, &JointLassoSpec::new(0.1, 0.1), &settings()),
            Err(Error::GroupTooSmall { .. })
        ));
    }
}
