//! High-level estimators: the weighted interaction lasso with per-group
//! penalties, the separate-models baseline, and the group-indicator
//! baseline. Each fit returns a model object carrying original-scale
//! coefficient blocks and solver diagnostics, with a uniform predict
//! surface.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientBlock, FitDiagnostics, GroupedDataset};
use crate::design::{
    assemble_penalty_factors, build_fair_design, build_indicator_design, split_coefficients,
    Scaling,
};
use crate::error::{Error, Result};
use crate::solver::{solve, PenalizedProblem, PenaltyOrder, SolverSettings};

/// What `predict` does for a group label absent at training time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnseenGroupPolicy {
    /// Reject the prediction request.
    #[default]
    Error,
    /// Interaction model: base block only. Indicator model: zero dummies.
    /// Separate models: still an error (there is nothing to fall back on).
    Fallback,
}

/// Uniform prediction surface over the fitted model kinds.
pub trait GroupedPredictor {
    fn predict_with(
        &self,
        features: ArrayView2<'_, f64>,
        groups: &[String],
        policy: UnseenGroupPolicy,
    ) -> Result<Array1<f64>>;

    fn predict(
        &self,
        features: ArrayView2<'_, f64>,
        groups: &[String],
    ) -> Result<Array1<f64>> {
        self.predict_with(features, groups, UnseenGroupPolicy::Error)
    }

    fn predict_dataset(&self, data: &GroupedDataset) -> Result<Array1<f64>> {
        self.predict(data.features(), &data.group_labels())
    }
}

fn check_feature_count(expected: usize, features: &ArrayView2<'_, f64>) -> Result<()> {
    if features.ncols() != expected {
        return Err(Error::ShapeMismatch(format!(
            "model was trained on {expected} covariates, got {}",
            features.ncols()
        )));
    }
    Ok(())
}

/// Fitted interaction model: shared base block plus one offset block per
/// non-base group, all on the original covariate scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairModel {
    pub base: CoefficientBlock,
    pub groups: BTreeMap<String, CoefficientBlock>,
    pub base_group: String,
    pub scaling: Scaling,
    pub diagnostics: FitDiagnostics,
    pub lambdas: BTreeMap<String, f64>,
    pub feature_names: Vec<String>,
}

impl FairModel {
    fn predict_row(&self, x: ndarray::ArrayView1<'_, f64>, block: Option<&CoefficientBlock>) -> f64 {
        let mut pred = self.base.intercept;
        for (j, &xj) in x.iter().enumerate() {
            pred += self.base.weights[j] * xj;
        }
        if let Some(b) = block {
            pred += b.intercept;
            for (j, &xj) in x.iter().enumerate() {
                pred += b.weights[j] * xj;
            }
        }
        pred
    }
}

impl GroupedPredictor for FairModel {
    fn predict_with(
        &self,
        features: ArrayView2<'_, f64>,
        groups: &[String],
        policy: UnseenGroupPolicy,
    ) -> Result<Array1<f64>> {
        check_feature_count(self.base.num_weights(), &features)?;
        if groups.len() != features.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} group labels for {} rows",
                groups.len(),
                features.nrows()
            )));
        }
        let mut out = Array1::zeros(features.nrows());
        for (i, gid) in groups.iter().enumerate() {
            let block = if *gid == self.base_group {
                None
            } else {
                match self.groups.get(gid) {
                    Some(b) => Some(b),
                    None => match policy {
                        UnseenGroupPolicy::Error => {
                            return Err(Error::UnknownGroup(gid.clone()))
                        }
                        UnseenGroupPolicy::Fallback => None,
                    },
                }
            };
            out[i] = self.predict_row(features.row(i), block);
        }
        Ok(out)
    }
}

/// Fits the interaction model at fixed per-group penalties `lambda_k`.
pub fn fit_fair(
    data: &GroupedDataset,
    lambdas: &BTreeMap<String, f64>,
    settings: &SolverSettings,
) -> Result<FairModel> {
    fit_fair_impl(data, lambdas, settings, None).map(|(m, _)| m)
}

/// Same as [`fit_fair`], but warm-startable and returning the flat
/// standardized coefficient vector for pathwise reuse.
pub(crate) fn fit_fair_impl(
    data: &GroupedDataset,
    lambdas: &BTreeMap<String, f64>,
    settings: &SolverSettings,
    warm: Option<&Array1<f64>>,
) -> Result<(FairModel, Array1<f64>)> {
    for (gid, &nk) in data.group_ids().iter().zip(data.group_sizes()) {
        if nk < 2 {
            return Err(Error::GroupTooSmall {
                group: gid.clone(),
                size: nk,
                needed: 2,
            });
        }
    }
    let design = build_fair_design(data, None)?;
    let (lambda, factors) = assemble_penalty_factors(&design, lambdas)?;
    let problem = PenalizedProblem::new(
        design.expanded.clone(),
        data.outcome().to_owned(),
        design.sample_weight.clone(),
        factors,
        PenaltyOrder::Lasso,
        lambda,
    )?;
    let (flat, diagnostics) = solve(&problem, None, settings, warm.map(|w| w.view()))?;
    let blocks = split_coefficients(&design, flat.view())?;

    let base = design.scaling.unscale_block(&blocks.base);
    let mut groups = BTreeMap::new();
    for (gid, block) in &blocks.groups {
        groups.insert(gid.clone(), design.scaling.unscale_block(block));
    }
    Ok((
        FairModel {
            base,
            groups,
            base_group: design.base_group.clone(),
            scaling: design.scaling.clone(),
            diagnostics,
            lambdas: lambdas.clone(),
            feature_names: data.feature_names().to_vec(),
        },
        flat,
    ))
}

/// One independent lasso per group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparateFit {
    pub block: CoefficientBlock,
    pub lambda: f64,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparateModels {
    pub models: BTreeMap<String, SeparateFit>,
    pub feature_names: Vec<String>,
}

impl GroupedPredictor for SeparateModels {
    fn predict_with(
        &self,
        features: ArrayView2<'_, f64>,
        groups: &[String],
        _policy: UnseenGroupPolicy,
    ) -> Result<Array1<f64>> {
        let m = self
            .models
            .values()
            .next()
            .map_or(0, |f| f.block.num_weights());
        check_feature_count(m, &features)?;
        let mut out = Array1::zeros(features.nrows());
        for (i, gid) in groups.iter().enumerate() {
            // no shared block exists, so unseen groups error under any policy
            let fit = self
                .models
                .get(gid)
                .ok_or_else(|| Error::UnknownGroup(gid.clone()))?;
            let x = features.row(i);
            let mut pred = fit.block.intercept;
            for (j, &xj) in x.iter().enumerate() {
                pred += fit.block.weights[j] * xj;
            }
            out[i] = pred;
        }
        Ok(out)
    }
}

/// Fits an independent lasso per group: unpenalized intercept, uniform
/// `1/n_k` weights within the group, its own `lambda`.
pub fn fit_separate(
    data: &GroupedDataset,
    lambda_per_group: &BTreeMap<String, f64>,
    settings: &SolverSettings,
) -> Result<SeparateModels> {
    let mut models = BTreeMap::new();
    for (k, gid) in data.group_ids().iter().enumerate() {
        let nk = data.group_sizes()[k];
        if nk < 2 {
            return Err(Error::GroupTooSmall {
                group: gid.clone(),
                size: nk,
                needed: 2,
            });
        }
        let lambda = *lambda_per_group.get(gid).ok_or_else(|| {
            Error::InvalidArgument(format!("no lambda given for group `{gid}`"))
        })?;
        let sub = data.restrict_to_group(gid)?;
        let (fit, _) = fit_group_lasso(&sub, lambda, settings, None)?;
        models.insert(gid.clone(), fit);
    }
    Ok(SeparateModels {
        models,
        feature_names: data.feature_names().to_vec(),
    })
}

/// Standardized single-group lasso problem: unpenalized intercept plus the
/// group's covariates at uniform `1/n_k` weights. Shared by the
/// separate-models fit and its tuning grid.
pub(crate) fn group_lasso_problem(group_data: &GroupedDataset) -> Result<PenalizedProblem> {
    group_lasso_parts(group_data).map(|(p, _)| p)
}

fn group_lasso_parts(group_data: &GroupedDataset) -> Result<(PenalizedProblem, Scaling)> {
    let n = group_data.n();
    let m = group_data.m();
    let weights = Array1::from_elem(n, 1.0 / n as f64);
    let scaling = Scaling::weighted(group_data.features(), weights.view());
    let std = scaling.apply(group_data.features());

    let mut design = Array2::zeros((n, m + 1));
    for i in 0..n {
        design[[i, 0]] = 1.0;
        for j in 0..m {
            design[[i, 1 + j]] = std[[i, j]];
        }
    }
    let mut factors = Array1::ones(m + 1);
    factors[0] = 0.0;
    let problem = PenalizedProblem::new(
        design,
        group_data.outcome().to_owned(),
        weights,
        factors,
        PenaltyOrder::Lasso,
        0.0,
    )?;
    Ok((problem, scaling))
}

/// Weighted single-group lasso on its own standardized design; the
/// work-horse behind the separate-models baseline.
pub(crate) fn fit_group_lasso(
    group_data: &GroupedDataset,
    lambda: f64,
    settings: &SolverSettings,
    warm: Option<&Array1<f64>>,
) -> Result<(SeparateFit, Array1<f64>)> {
    let m = group_data.m();
    let (problem, scaling) = group_lasso_parts(group_data)?;
    let problem = problem.with_lambda(lambda)?;
    let (flat, diagnostics) = solve(&problem, None, settings, warm.map(|w| w.view()))?;
    let std_block = CoefficientBlock::new(
        flat[0],
        flat.iter().skip(1).copied().collect(),
        vec![true; m],
    );
    Ok((
        SeparateFit {
            block: scaling.unscale_block(&std_block),
            lambda,
            diagnostics,
        },
        flat,
    ))
}

/// Pooled lasso with group-membership dummies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndicatorModel {
    /// Intercept and covariate weights on the original scale.
    pub coef: CoefficientBlock,
    /// Dummy coefficient per non-reference group.
    pub dummies: BTreeMap<String, f64>,
    pub reference_group: String,
    pub lambda: f64,
    pub diagnostics: FitDiagnostics,
    pub feature_names: Vec<String>,
}

impl GroupedPredictor for IndicatorModel {
    fn predict_with(
        &self,
        features: ArrayView2<'_, f64>,
        groups: &[String],
        policy: UnseenGroupPolicy,
    ) -> Result<Array1<f64>> {
        check_feature_count(self.coef.num_weights(), &features)?;
        let mut out = Array1::zeros(features.nrows());
        for (i, gid) in groups.iter().enumerate() {
            let dummy = if *gid == self.reference_group {
                0.0
            } else {
                match self.dummies.get(gid) {
                    Some(&d) => d,
                    None => match policy {
                        UnseenGroupPolicy::Error => {
                            return Err(Error::UnknownGroup(gid.clone()))
                        }
                        UnseenGroupPolicy::Fallback => 0.0,
                    },
                }
            };
            let x = features.row(i);
            let mut pred = self.coef.intercept + dummy;
            for (j, &xj) in x.iter().enumerate() {
                pred += self.coef.weights[j] * xj;
            }
            out[i] = pred;
        }
        Ok(out)
    }
}

/// Fits the pooled indicator baseline: unweighted lasso over
/// `[intercept | covariates | K-1 dummies]` at a single `lambda`.
pub fn fit_indicator(
    data: &GroupedDataset,
    lambda: f64,
    settings: &SolverSettings,
) -> Result<IndicatorModel> {
    fit_indicator_impl(data, lambda, settings, None).map(|(m, _)| m)
}

pub(crate) fn fit_indicator_impl(
    data: &GroupedDataset,
    lambda: f64,
    settings: &SolverSettings,
    warm: Option<&Array1<f64>>,
) -> Result<(IndicatorModel, Array1<f64>)> {
    let design = build_indicator_design(data);
    let problem = PenalizedProblem::new(
        design.expanded.clone(),
        data.outcome().to_owned(),
        design.sample_weight.clone(),
        design.penalty_factor.clone(),
        PenaltyOrder::Lasso,
        lambda,
    )?;
    let (flat, diagnostics) = solve(&problem, None, settings, warm.map(|w| w.view()))?;
    let m = data.m();
    let std_block = CoefficientBlock::new(
        flat[0],
        flat.iter().skip(1).take(m).copied().collect(),
        vec![true; m],
    );
    let coef = design.scaling.unscale_block(&std_block);
    let mut dummies = BTreeMap::new();
    for (slot, gid) in design.dummy_groups().iter().enumerate() {
        dummies.insert(gid.clone(), flat[1 + m + slot]);
    }
    Ok((
        IndicatorModel {
            coef,
            dummies,
            reference_group: design.reference_group.clone(),
            lambda,
            diagnostics,
            feature_names: data.feature_names().to_vec(),
        },
        flat,
    ))
}
