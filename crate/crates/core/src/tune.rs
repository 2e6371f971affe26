//! Cross-validated grid search over each method's tuning parameters,
//! selecting by average held-out MSE on the designated objective groups
//! (the small groups), then refitting on the full training data.
//!
//! Folds are stratified by group. Lambda axes run 12 log-spaced values from
//! the data-derived entry threshold down three decades, plus zero, and are
//! walked descending with warm starts. The interaction model gets the full
//! Cartesian product of its per-group axes up to three groups, and
//! coordinate-wise alternation (two passes) beyond that. The separate-models
//! baseline tunes one lambda per group on that group's own held-out error,
//! since no other group's objective depends on it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::design::{build_fair_design, build_indicator_design, ColumnRole};
use crate::error::{Error, Result};
use crate::fusion::{build_joint_problem, fit_joint, fit_joint_impl, JointLassoSpec};
use crate::metrics::group_mse;
use crate::models::{
    fit_fair, fit_fair_impl, fit_group_lasso, fit_indicator, fit_indicator_impl, fit_separate,
    FairModel, GroupedPredictor, IndicatorModel, SeparateModels, UnseenGroupPolicy,
};
use crate::simgen::derive_seed;
use crate::solver::{lambda_max, PenalizedProblem, PenaltyOrder, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Fair,
    Separate,
    Indicator,
    Joint,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Fair,
        Method::Separate,
        Method::Indicator,
        Method::Joint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Fair => "fair",
            Method::Separate => "separate",
            Method::Indicator => "indicator",
            Method::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-method hyperparameter grids.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// Per-group lambda axes, dataset group order.
    Fair(Vec<(String, Vec<f64>)>),
    /// Per-group lambda axes, tuned independently.
    Separate(Vec<(String, Vec<f64>)>),
    Indicator(Vec<f64>),
    Joint { lambdas: Vec<f64>, gammas: Vec<f64> },
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperParams {
    Fair(BTreeMap<String, f64>),
    Separate(BTreeMap<String, f64>),
    /// One group's axis during separate-models tuning.
    SeparateAxis { group: String, lambda: f64 },
    Indicator { lambda: f64 },
    Joint { lambda: f64, gamma: f64 },
}

impl HyperParams {
    pub fn total_penalty(&self) -> f64 {
        match self {
            HyperParams::Fair(m) | HyperParams::Separate(m) => m.values().sum(),
            HyperParams::SeparateAxis { lambda, .. } => *lambda,
            HyperParams::Indicator { lambda } => *lambda,
            HyperParams::Joint { lambda, gamma } => lambda + gamma,
        }
    }
}

impl std::fmt::Display for HyperParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HyperParams::Fair(m) | HyperParams::Separate(m) => {
                let parts: Vec<String> =
                    m.iter().map(|(g, l)| format!("lambda[{g}]={l}")).collect();
                f.write_str(&parts.join(";"))
            }
            HyperParams::SeparateAxis { group, lambda } => {
                write!(f, "group={group};lambda={lambda}")
            }
            HyperParams::Indicator { lambda } => write!(f, "lambda={lambda}"),
            HyperParams::Joint { lambda, gamma } => write!(f, "lambda={lambda};gamma={gamma}"),
        }
    }
}

/// Stratified fold assignment: per-row fold index.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    folds: Vec<usize>,
    num_folds: usize,
}

impl FoldAssignment {
    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.folds
    }

    pub fn held_out_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

/// Splits each group's samples as evenly as possible across `folds`,
/// deterministically from `seed`.
pub fn make_folds(data: &GroupedDataset, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    for (gid, &nk) in data.group_ids().iter().zip(data.group_sizes()) {
        if nk < folds {
            return Err(Error::GroupTooSmall {
                group: gid.clone(),
                size: nk,
                needed: folds,
            });
        }
    }
    let mut assignment = vec![0usize; data.n()];
    for k in 0..data.num_groups() {
        let mut rows = data.group_rows(k).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds", k as u64));
        rows.shuffle(&mut rng);
        for (i, &row) in rows.iter().enumerate() {
            assignment[row] = i % folds;
        }
    }
    Ok(FoldAssignment {
        folds: assignment,
        num_folds: folds,
    })
}

/// 12 log-spaced values from `lmax` down three decades, plus 0, descending.
fn log_axis(lmax: f64) -> Vec<f64> {
    if !(lmax > 0.0) || !lmax.is_finite() {
        return vec![0.0];
    }
    let mut axis: Vec<f64> = (0..12)
        .map(|i| lmax * 10f64.powf(-3.0 * i as f64 / 11.0))
        .collect();
    axis.push(0.0);
    axis
}

/// Per-group entry thresholds for the interaction design: gradient bound of
/// each block at the all-zero fit, after the unpenalized base intercept
/// absorbs the weighted mean.
fn fair_block_lambda_max(data: &GroupedDataset) -> Result<BTreeMap<String, f64>> {
    let design = build_fair_design(data, None)?;
    let w = &design.sample_weight;
    let wsum: f64 = w.sum();
    let y = data.outcome();
    let ybar: f64 = y
        .iter()
        .zip(w.iter())
        .map(|(yi, wi)| wi * yi)
        .sum::<f64>()
        / wsum;
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (j, info) in design.column_map.iter().enumerate() {
        if info.role == ColumnRole::BaseIntercept {
            continue;
        }
        let col = design.expanded.column(j);
        let dot: f64 = col
            .iter()
            .zip(w.iter())
            .zip(y.iter())
            .map(|((x, wi), yi)| wi * x * (yi - ybar))
            .sum();
        let v = 2.0 * dot.abs();
        let slot = out.entry(info.group.clone()).or_insert(0.0);
        if v > *slot {
            *slot = v;
        }
    }
    Ok(out)
}

/// Data-driven default grid for a method.
pub fn default_grid(method: Method, data: &GroupedDataset) -> Result<Grid> {
    match method {
        Method::Fair => {
            let lmax = fair_block_lambda_max(data)?;
            let axes = data
                .group_ids()
                .iter()
                .map(|g| (g.clone(), log_axis(lmax[g])))
                .collect();
            Ok(Grid::Fair(axes))
        }
        Method::Separate => {
            let mut axes = Vec::new();
            for gid in data.group_ids() {
                let sub = data.restrict_to_group(gid)?;
                let problem = crate::models::group_lasso_problem(&sub)?;
                let lmax = lambda_max(&problem)?;
                axes.push((gid.clone(), log_axis(lmax)));
            }
            Ok(Grid::Separate(axes))
        }
        Method::Indicator => {
            let design = build_indicator_design(data);
            let problem = PenalizedProblem::new(
                design.expanded.clone(),
                data.outcome().to_owned(),
                design.sample_weight.clone(),
                design.penalty_factor.clone(),
                PenaltyOrder::Lasso,
                0.0,
            )?;
            Ok(Grid::Indicator(log_axis(lambda_max(&problem)?)))
        }
        Method::Joint => {
            let joint = build_joint_problem(data, &JointLassoSpec::new(0.0, 0.0))?;
            let lmax = lambda_max(&joint.problem)?;
            // gamma scale anchored to the average weighted squared norm of
            // the slope columns
            let pf = joint.problem.penalty_factor();
            let w = joint.problem.sample_weight();
            let mut total = 0.0;
            let mut count = 0usize;
            for j in 0..joint.problem.p() {
                if pf[j] > 0.0 {
                    let col = joint.problem.design().column(j);
                    total += col
                        .iter()
                        .zip(w.iter())
                        .map(|(x, wi)| wi * x * x)
                        .sum::<f64>();
                    count += 1;
                }
            }
            let scale = if count > 0 { total / count as f64 } else { 1.0 };
            let mut gammas = vec![0.0];
            for i in 0..8 {
                gammas.push(scale * 10f64.powf(-3.0 + 5.0 * i as f64 / 7.0));
            }
            Ok(Grid::Joint {
                lambdas: log_axis(lmax),
                gammas,
            })
        }
    }
}

/// Tuning request.
#[derive(Debug, Clone)]
pub struct TuningSpec {
    pub method: Method,
    pub folds: usize,
    pub grid: Option<Grid>,
    /// Groups whose held-out MSE is averaged into the selection objective.
    pub objective_groups: BTreeSet<String>,
    pub seed: u64,
}

impl TuningSpec {
    pub fn new(method: Method, objective_groups: BTreeSet<String>, seed: u64) -> Self {
        Self {
            method,
            folds: 5,
            grid: None,
            objective_groups,
            seed,
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneEntry {
    pub params: HyperParams,
    /// Held-out per-group MSE, one map per fold.
    pub fold_group_mse: Vec<BTreeMap<String, f64>>,
    /// Objective-group average per fold.
    pub fold_objective: Vec<f64>,
    pub mean_objective: f64,
    /// 0 = best among valid entries; `usize::MAX` for invalid ones.
    pub rank: usize,
    pub valid: bool,
    pub error: Option<String>,
}

/// A fitted model of any method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FittedModel {
    Fair(FairModel),
    Separate(SeparateModels),
    Indicator(IndicatorModel),
    Joint(crate::fusion::JointLassoModel),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Fair(_) => Method::Fair,
            FittedModel::Separate(_) => Method::Separate,
            FittedModel::Indicator(_) => Method::Indicator,
            FittedModel::Joint(_) => Method::Joint,
        }
    }

    /// (total sweeps, all converged) across the model's solver calls.
    pub fn diagnostics_summary(&self) -> (usize, bool) {
        match self {
            FittedModel::Fair(m) => (m.diagnostics.iterations, m.diagnostics.converged),
            FittedModel::Indicator(m) => (m.diagnostics.iterations, m.diagnostics.converged),
            FittedModel::Joint(m) => (m.diagnostics.iterations, m.diagnostics.converged),
            FittedModel::Separate(m) => {
                let sweeps = m.models.values().map(|f| f.diagnostics.iterations).sum();
                let conv = m.models.values().all(|f| f.diagnostics.converged);
                (sweeps, conv)
            }
        }
    }
}

impl GroupedPredictor for FittedModel {
    fn predict_with(
        &self,
        features: ndarray::ArrayView2<'_, f64>,
        groups: &[String],
        policy: UnseenGroupPolicy,
    ) -> Result<Array1<f64>> {
        match self {
            FittedModel::Fair(m) => m.predict_with(features, groups, policy),
            FittedModel::Separate(m) => m.predict_with(features, groups, policy),
            FittedModel::Indicator(m) => m.predict_with(features, groups, policy),
            FittedModel::Joint(m) => m.predict_with(features, groups, policy),
        }
    }
}

/// Grid-search outcome: every evaluated point, the selected one, and the
/// model refit on the full training data at that point.
#[derive(Debug, Clone)]
pub struct TuningReport {
    pub method: Method,
    pub entries: Vec<TuneEntry>,
    pub selected: HyperParams,
    pub model: FittedModel,
    pub folds: usize,
    pub objective_groups: BTreeSet<String>,
    pub seed: u64,
}

impl TuningReport {
    /// Re-runs selection with a different objective-group set, reusing the
    /// recorded per-group fold MSEs. Separate-models tuning is per group by
    /// construction, so its selection does not change.
    pub fn reselect(&self, objective_groups: &BTreeSet<String>) -> Result<HyperParams> {
        if self.method == Method::Separate {
            return Ok(self.selected.clone());
        }
        let rescored: Vec<TuneEntry> = self
            .entries
            .iter()
            .map(|e| {
                let mut e = e.clone();
                if e.valid {
                    e.fold_objective = e
                        .fold_group_mse
                        .iter()
                        .map(|m| objective_average(m, objective_groups))
                        .collect();
                    e.mean_objective = mean(&e.fold_objective);
                }
                e
            })
            .collect();
        let best = select_best(&rescored)?;
        Ok(rescored[best].params.clone())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn objective_average(per_group: &BTreeMap<String, f64>, objective: &BTreeSet<String>) -> f64 {
    let vals: Vec<f64> = objective
        .iter()
        .filter_map(|g| per_group.get(g).copied())
        .collect();
    mean(&vals)
}

/// Ties within 1e-10 of the minimum go to the most regularized point; any
/// remaining tie goes to grid order.
fn select_best(entries: &[TuneEntry]) -> Result<usize> {
    let mut min = f64::INFINITY;
    for e in entries.iter().filter(|e| e.valid) {
        if e.mean_objective < min {
            min = e.mean_objective;
        }
    }
    if !min.is_finite() {
        return Err(Error::InvalidArgument(
            "no grid point produced a valid fit".into(),
        ));
    }
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        if !e.valid || e.mean_objective > min + 1e-10 {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                if e.params.total_penalty() > entries[b].params.total_penalty() {
                    best = Some(i);
                }
            }
        }
    }
    Ok(best.expect("at least one candidate"))
}

struct FoldData {
    train: GroupedDataset,
    test: GroupedDataset,
}

fn build_fold_data(data: &GroupedDataset, assignment: &FoldAssignment) -> Result<Vec<FoldData>> {
    (0..assignment.num_folds())
        .map(|f| {
            Ok(FoldData {
                train: data.restrict_rows(&assignment.train_rows(f))?,
                test: data.restrict_rows(&assignment.held_out_rows(f))?,
            })
        })
        .collect()
}

/// Fits one grid point on a fold's training split and scores the held-out
/// split per group. Returns the flat coefficient vector for warm starts.
fn fit_and_score(
    fold: &FoldData,
    params: &HyperParams,
    settings: &SolverSettings,
    warm: Option<&Array1<f64>>,
) -> Result<(BTreeMap<String, f64>, Array1<f64>)> {
    let (preds, flat) = match params {
        HyperParams::Fair(lambdas) => {
            let (model, flat) = fit_fair_impl(&fold.train, lambdas, settings, warm)?;
            (model.predict_dataset(&fold.test)?, flat)
        }
        HyperParams::Indicator { lambda } => {
            let (model, flat) = fit_indicator_impl(&fold.train, *lambda, settings, warm)?;
            (model.predict_dataset(&fold.test)?, flat)
        }
        HyperParams::Joint { lambda, gamma } => {
            let spec = JointLassoSpec::new(*lambda, *gamma);
            let (model, flat) = fit_joint_impl(&fold.train, &spec, settings, warm)?;
            (model.predict_dataset(&fold.test)?, flat)
        }
        HyperParams::SeparateAxis { lambda, .. } => {
            let (fit, flat) = fit_group_lasso(&fold.train, *lambda, settings, warm)?;
            let mut preds = Array1::zeros(fold.test.n());
            let feats = fold.test.features();
            for i in 0..fold.test.n() {
                let x = feats.row(i);
                let mut p = fit.block.intercept;
                for (j, &xj) in x.iter().enumerate() {
                    p += fit.block.weights[j] * xj;
                }
                preds[i] = p;
            }
            (preds, flat)
        }
        HyperParams::Separate(_) => {
            return Err(Error::InvalidArgument(
                "separate grids are evaluated one group axis at a time".into(),
            ))
        }
    };
    Ok((group_mse(preds.view(), &fold.test)?, flat))
}

/// Evaluates warm-start chains of grid points over all folds (folds in
/// parallel, each chain sequential). Returns per-point fold results in
/// flattened chain order.
#[allow(clippy::type_complexity)]
fn evaluate_chains(
    folds: &[FoldData],
    chains: &[Vec<HyperParams>],
    settings: &SolverSettings,
) -> Vec<Vec<std::result::Result<BTreeMap<String, f64>, String>>> {
    let per_fold: Vec<Vec<std::result::Result<BTreeMap<String, f64>, String>>> = folds
        .par_iter()
        .map(|fold| {
            let mut out = Vec::new();
            for chain in chains {
                let mut warm: Option<Array1<f64>> = None;
                for params in chain {
                    match fit_and_score(fold, params, settings, warm.as_ref()) {
                        Ok((mse_map, flat)) => {
                            warm = Some(flat);
                            out.push(Ok(mse_map));
                        }
                        Err(e) => {
                            warm = None;
                            out.push(Err(e.to_string()));
                        }
                    }
                }
            }
            out
        })
        .collect();

    let points: usize = chains.iter().map(Vec::len).sum();
    (0..points)
        .map(|p| per_fold.iter().map(|f| f[p].clone()).collect())
        .collect()
}

fn assemble_entries(
    flattened: Vec<HyperParams>,
    results: Vec<Vec<std::result::Result<BTreeMap<String, f64>, String>>>,
    objective_groups: &BTreeSet<String>,
) -> Vec<TuneEntry> {
    flattened
        .into_iter()
        .zip(results)
        .map(|(params, folds)| {
            let mut fold_group_mse = Vec::with_capacity(folds.len());
            let mut error = None;
            for r in folds {
                match r {
                    Ok(m) => fold_group_mse.push(m),
                    Err(e) => {
                        if error.is_none() {
                            error = Some(e);
                        }
                    }
                }
            }
            if let Some(error) = error {
                TuneEntry {
                    params,
                    fold_group_mse: Vec::new(),
                    fold_objective: Vec::new(),
                    mean_objective: f64::NAN,
                    rank: usize::MAX,
                    valid: false,
                    error: Some(error),
                }
            } else {
                let fold_objective: Vec<f64> = fold_group_mse
                    .iter()
                    .map(|m| objective_average(m, objective_groups))
                    .collect();
                let mean_objective = mean(&fold_objective);
                TuneEntry {
                    params,
                    fold_group_mse,
                    fold_objective,
                    mean_objective,
                    rank: usize::MAX,
                    valid: true,
                    error: None,
                }
            }
        })
        .collect()
}

fn assign_ranks(entries: &mut [TuneEntry]) {
    let mut order: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].valid).collect();
    order.sort_by(|&a, &b| {
        entries[a]
            .mean_objective
            .partial_cmp(&entries[b].mean_objective)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        entries[i].rank = rank;
    }
}

/// Refits a method on the full training data at fixed hyperparameters.
pub fn refit(
    data: &GroupedDataset,
    params: &HyperParams,
    settings: &SolverSettings,
) -> Result<FittedModel> {
    Ok(match params {
        HyperParams::Fair(lambdas) => FittedModel::Fair(fit_fair(data, lambdas, settings)?),
        HyperParams::Separate(lambdas) => {
            FittedModel::Separate(fit_separate(data, lambdas, settings)?)
        }
        HyperParams::Indicator { lambda } => {
            FittedModel::Indicator(fit_indicator(data, *lambda, settings)?)
        }
        HyperParams::Joint { lambda, gamma } => FittedModel::Joint(fit_joint(
            data,
            &JointLassoSpec::new(*lambda, *gamma),
            settings,
        )?),
        HyperParams::SeparateAxis { .. } => {
            return Err(Error::InvalidArgument(
                "cannot refit a single separate-models axis".into(),
            ))
        }
    })
}

fn fair_cartesian_chains(axes: &[(String, Vec<f64>)]) -> Vec<Vec<HyperParams>> {
    let k = axes.len();
    let last = k - 1;
    let mut chains = Vec::new();
    let mut idx = vec![0usize; last];
    loop {
        let mut chain = Vec::with_capacity(axes[last].1.len());
        for &v in &axes[last].1 {
            let mut map = BTreeMap::new();
            for (a, &i) in idx.iter().enumerate() {
                map.insert(axes[a].0.clone(), axes[a].1[i]);
            }
            map.insert(axes[last].0.clone(), v);
            chain.push(HyperParams::Fair(map));
        }
        chains.push(chain);
        // odometer over the prefix axes
        let mut pos = last;
        loop {
            if pos == 0 {
                return chains;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axes[pos].1.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn params_key(params: &HyperParams) -> String {
    match params {
        HyperParams::Fair(m) | HyperParams::Separate(m) => m
            .iter()
            .map(|(g, l)| format!("{g}:{:x}", l.to_bits()))
            .collect::<Vec<_>>()
            .join(","),
        HyperParams::SeparateAxis { group, lambda } => {
            format!("{group}:{:x}", lambda.to_bits())
        }
        HyperParams::Indicator { lambda } => format!("{:x}", lambda.to_bits()),
        HyperParams::Joint { lambda, gamma } => {
            format!("{:x},{:x}", lambda.to_bits(), gamma.to_bits())
        }
    }
}

/// Runs the grid search and refits at the selected point.
pub fn tune(
    data: &GroupedDataset,
    spec: &TuningSpec,
    settings: &SolverSettings,
) -> Result<TuningReport> {
    if spec.objective_groups.is_empty() {
        return Err(Error::InvalidArgument(
            "objective_groups must not be empty".into(),
        ));
    }
    for g in &spec.objective_groups {
        if data.group_position(g).is_none() {
            return Err(Error::UnknownGroup(g.clone()));
        }
    }
    let grid = match &spec.grid {
        Some(g) => g.clone(),
        None => default_grid(spec.method, data)?,
    };
    let assignment = make_folds(data, spec.folds, spec.seed)?;

    let (entries, selected) = match (&grid, spec.method) {
        (Grid::Indicator(lambdas), Method::Indicator) => {
            let folds = build_fold_data(data, &assignment)?;
            let chain: Vec<HyperParams> = lambdas
                .iter()
                .map(|&lambda| HyperParams::Indicator { lambda })
                .collect();
            let results = evaluate_chains(&folds, &[chain.clone()], settings);
            let mut entries = assemble_entries(chain, results, &spec.objective_groups);
            assign_ranks(&mut entries);
            let best = select_best(&entries)?;
            let selected = entries[best].params.clone();
            (entries, selected)
        }
        (Grid::Joint { lambdas, gammas }, Method::Joint) => {
            let folds = build_fold_data(data, &assignment)?;
            let mut chains = Vec::new();
            for &gamma in gammas {
                chains.push(
                    lambdas
                        .iter()
                        .map(|&lambda| HyperParams::Joint { lambda, gamma })
                        .collect::<Vec<_>>(),
                );
            }
            let flattened: Vec<HyperParams> = chains.iter().flatten().cloned().collect();
            let results = evaluate_chains(&folds, &chains, settings);
            let mut entries = assemble_entries(flattened, results, &spec.objective_groups);
            assign_ranks(&mut entries);
            let best = select_best(&entries)?;
            let selected = entries[best].params.clone();
            (entries, selected)
        }
        (Grid::Fair(axes), Method::Fair) => {
            let folds = build_fold_data(data, &assignment)?;
            if axes.len() <= 3 {
                let chains = fair_cartesian_chains(axes);
                let flattened: Vec<HyperParams> = chains.iter().flatten().cloned().collect();
                let results = evaluate_chains(&folds, &chains, settings);
                let mut entries = assemble_entries(flattened, results, &spec.objective_groups);
                assign_ranks(&mut entries);
                let best = select_best(&entries)?;
                let selected = entries[best].params.clone();
                (entries, selected)
            } else {
                // coordinate-wise alternation: two passes, one axis at a time,
                // all other axes held at their current values
                let mut current: BTreeMap<String, f64> = axes
                    .iter()
                    .map(|(g, vals)| (g.clone(), vals[0]))
                    .collect();
                let mut entries: Vec<TuneEntry> = Vec::new();
                let mut seen: HashMap<String, usize> = HashMap::new();
                for _pass in 0..2 {
                    for (g, vals) in axes {
                        let mut chain = Vec::new();
                        let mut chain_keys = Vec::new();
                        for &v in vals {
                            let mut map = current.clone();
                            map.insert(g.clone(), v);
                            let params = HyperParams::Fair(map);
                            let key = params_key(&params);
                            if !seen.contains_key(&key) {
                                chain_keys.push(key.clone());
                                chain.push(params);
                            }
                        }
                        if !chain.is_empty() {
                            let results = evaluate_chains(&folds, &[chain.clone()], settings);
                            let new_entries =
                                assemble_entries(chain, results, &spec.objective_groups);
                            for (key, e) in chain_keys.into_iter().zip(new_entries) {
                                seen.insert(key, entries.len());
                                entries.push(e);
                            }
                        }
                        // pick this axis' best among its candidates
                        let candidate_entries: Vec<TuneEntry> = vals
                            .iter()
                            .map(|&v| {
                                let mut map = current.clone();
                                map.insert(g.clone(), v);
                                let key = params_key(&HyperParams::Fair(map));
                                entries[seen[&key]].clone()
                            })
                            .collect();
                        let best = select_best(&candidate_entries)?;
                        if let HyperParams::Fair(m) = &candidate_entries[best].params {
                            current.insert(g.clone(), m[g]);
                        }
                    }
                }
                assign_ranks(&mut entries);
                let best = select_best(&entries)?;
                let selected = entries[best].params.clone();
                (entries, selected)
            }
        }
        (Grid::Separate(axes), Method::Separate) => {
            let mut entries: Vec<TuneEntry> = Vec::new();
            let mut chosen: BTreeMap<String, f64> = BTreeMap::new();
            for (gid, vals) in axes {
                let k = data
                    .group_position(gid)
                    .ok_or_else(|| Error::UnknownGroup(gid.clone()))?;
                let sub = data.restrict_to_group(gid)?;
                // the global stratified assignment restricted to this group
                let sub_folds: Vec<usize> = data
                    .group_rows(k)
                    .iter()
                    .map(|&r| assignment.fold_of()[r])
                    .collect();
                let sub_assignment = FoldAssignment {
                    folds: sub_folds,
                    num_folds: assignment.num_folds(),
                };
                let folds = build_fold_data(&sub, &sub_assignment)?;
                let chain: Vec<HyperParams> = vals
                    .iter()
                    .map(|&lambda| HyperParams::SeparateAxis {
                        group: gid.clone(),
                        lambda,
                    })
                    .collect();
                let own_objective: BTreeSet<String> = [gid.clone()].into_iter().collect();
                let results = evaluate_chains(&folds, &[chain.clone()], settings);
                let mut axis_entries = assemble_entries(chain, results, &own_objective);
                assign_ranks(&mut axis_entries);
                let best = select_best(&axis_entries)?;
                if let HyperParams::SeparateAxis { lambda, .. } = axis_entries[best].params {
                    chosen.insert(gid.clone(), lambda);
                }
                entries.extend(axis_entries);
            }
            let selected = HyperParams::Separate(chosen);
            (entries, selected)
        }
        (g, m) => {
            return Err(Error::InvalidArgument(format!(
                "grid {g:?} does not match method {m}"
            )))
        }
    };

    if entries.iter().all(|e| !e.valid) {
        return Err(Error::InvalidArgument(
            "every grid point failed to fit".into(),
        ));
    }
    let model = refit(data, &selected, settings)?;
    Ok(TuningReport {
        method: spec.method,
        entries,
        selected,
        model,
        folds: spec.folds,
        objective_groups: spec.objective_groups.clone(),
        seed: spec.seed,
    })
}
