//! Experiment orchestration: the reference-scenario comparison, one-axis
//! parameter sweeps, the real-data sampling protocol, and the timing
//! harness. Replications fan out across a worker pool; every seed is
//! derived from (root seed, experiment scope, replication), so result
//! tables are identical across runs and across degrees of concurrency.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fair_core::metrics::group_mse;
use fair_core::models::GroupedPredictor;
use fair_core::simgen::{
    base_case, derive_seed, generate, sweep, GroupRole, SimulationScenario, SweepAxis,
};
use fair_core::solver::SolverSettings;
use fair_core::tune::{
    default_grid, refit, tune, FittedModel, Grid, HyperParams, Method, TuningSpec,
};
use fair_core::GroupedDataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::clock::{measure, Clock, SystemClock};
use crate::io::{load_csv, write_dataset_csv};
use crate::report::{
    export_fair_coefficients, sort_rows, summarize_test, write_coefficients_csv,
    write_fit_times_csv, write_rows_csv, write_summary, write_timing_csv, CoefficientExport,
    ResultRow, SummaryRow, TimingRow,
};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    pub folds: usize,
    /// Sweeps only: additionally report models selected by large-group MSE.
    pub dual_tuning: bool,
    pub data_path: Option<PathBuf>,
    pub outcome_col: String,
    pub group_col: String,
    pub large_label: Option<String>,
    pub small_label: Option<String>,
    pub train_large: usize,
    pub train_small: usize,
    pub test_per_group: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            replications: 50,
            seed: 42,
            folds: 5,
            dual_tuning: false,
            data_path: None,
            outcome_col: "y".to_string(),
            group_col: "group".to_string(),
            large_label: None,
            small_label: None,
            train_large: 2000,
            train_small: 200,
            test_per_group: 2000,
        }
    }
}

/// Optional overrides loaded from a TOML config file; unset fields keep
/// their defaults, and command-line flags override both.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub methods: Option<Vec<String>>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub dual_tuning: Option<bool>,
    pub data: Option<PathBuf>,
    pub outcome_col: Option<String>,
    pub group_col: Option<String>,
    pub large_label: Option<String>,
    pub small_label: Option<String>,
    pub train_large: Option<usize>,
    pub train_small: Option<usize>,
    pub test_per_group: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config `{}`", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config `{}`", path.display()))
    }

    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(methods) = &self.methods {
            config.methods = parse_methods_list(methods)?;
        }
        if let Some(v) = self.replications {
            config.replications = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.folds {
            config.folds = v;
        }
        if let Some(v) = self.dual_tuning {
            config.dual_tuning = v;
        }
        if let Some(v) = &self.data {
            config.data_path = Some(v.clone());
        }
        if let Some(v) = &self.outcome_col {
            config.outcome_col = v.clone();
        }
        if let Some(v) = &self.group_col {
            config.group_col = v.clone();
        }
        if let Some(v) = &self.large_label {
            config.large_label = Some(v.clone());
        }
        if let Some(v) = &self.small_label {
            config.small_label = Some(v.clone());
        }
        if let Some(v) = self.train_large {
            config.train_large = v;
        }
        if let Some(v) = self.train_small {
            config.train_small = v;
        }
        if let Some(v) = self.test_per_group {
            config.test_per_group = v;
        }
        Ok(())
    }
}

pub fn parse_methods_list(names: &[String]) -> Result<Vec<Method>> {
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(|e| anyhow!("{e}")))
        .collect()
}

pub fn parse_methods_csv(arg: &str) -> Result<Vec<Method>> {
    parse_methods_list(
        &arg.split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>(),
    )
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// Everything an experiment produces; writing to disk is a separate step.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summaries: Vec<SummaryRow>,
    pub coefficients: Option<CoefficientExport>,
    pub timing: Vec<TimingRow>,
}

impl ExperimentOutput {
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create `{}`", out_dir.display()))?;
        let mut written = Vec::new();
        if !self.rows.is_empty() {
            let results = out_dir.join("results.csv");
            write_rows_csv(&results, &self.rows)?;
            written.push(results);
            let times = out_dir.join("fit_times.csv");
            write_fit_times_csv(&times, &self.rows)?;
            written.push(times);
            let summary = out_dir.join("summary.txt");
            write_summary(&summary, &self.summaries)?;
            written.push(summary);
        }
        if let Some(export) = &self.coefficients {
            let path = out_dir.join("fair_coefficients.csv");
            write_coefficients_csv(&path, export)?;
            written.push(path);
        }
        if !self.timing.is_empty() {
            let path = out_dir.join("timing.csv");
            write_timing_csv(&path, &self.timing)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Tunes, refits (timed), and evaluates one method on a train/test pair.
fn evaluate_method(
    experiment: &str,
    scenario_name: &str,
    axis_value: Option<f64>,
    rep: usize,
    method: Method,
    method_index: usize,
    folds: usize,
    rep_seed: u64,
    objective: &BTreeSet<String>,
    large_objective: Option<&BTreeSet<String>>,
    train: &GroupedDataset,
    test: &GroupedDataset,
) -> Result<(Vec<ResultRow>, FittedModel)> {
    let spec = TuningSpec {
        method,
        folds,
        grid: None,
        objective_groups: objective.clone(),
        seed: derive_seed(rep_seed, "cv", method_index as u64),
    };
    let report = tune(train, &spec, &settings())?;

    let clock = SystemClock::new();
    let start = clock.now_seconds();
    let model = refit(train, &report.selected, &settings())?;
    let fit_seconds = clock.now_seconds() - start;

    let mut rows = rows_for_model(
        experiment,
        scenario_name,
        axis_value,
        rep,
        &model,
        &report.selected,
        "small",
        fit_seconds,
        train,
        test,
    )?;

    if let Some(large) = large_objective {
        let selected = report.reselect(large)?;
        let start = clock.now_seconds();
        let large_model = refit(train, &selected, &settings())?;
        let fit_seconds = clock.now_seconds() - start;
        rows.extend(rows_for_model(
            experiment,
            scenario_name,
            axis_value,
            rep,
            &large_model,
            &selected,
            "large",
            fit_seconds,
            train,
            test,
        )?);
    }
    Ok((rows, model))
}

#[allow(clippy::too_many_arguments)]
fn rows_for_model(
    experiment: &str,
    scenario_name: &str,
    axis_value: Option<f64>,
    rep: usize,
    model: &FittedModel,
    params: &HyperParams,
    tuning: &str,
    fit_seconds: f64,
    train: &GroupedDataset,
    test: &GroupedDataset,
) -> Result<Vec<ResultRow>> {
    let (sweeps, converged) = model.diagnostics_summary();
    let mut rows = Vec::new();
    for (split, data) in [("train", train), ("test", test)] {
        let preds = model.predict_dataset(data)?;
        let mses = group_mse(preds.view(), data)?;
        for gid in data.group_ids() {
            rows.push(ResultRow {
                experiment: experiment.to_string(),
                method: model.method().name().to_string(),
                scenario: scenario_name.to_string(),
                axis_value,
                replication: rep,
                group: gid.clone(),
                split: split.to_string(),
                mse: mses[gid],
                hyperparams: params.to_string(),
                tuning: tuning.to_string(),
                fit_seconds,
                solver_sweeps: sweeps,
                solver_converged: converged,
            });
        }
    }
    Ok(rows)
}

fn simulated_replication(
    experiment: &str,
    scenario: &SimulationScenario,
    axis_value: Option<f64>,
    config: &ExperimentConfig,
    rep: usize,
) -> Result<Vec<ResultRow>> {
    let rep_seed = derive_seed(config.seed, &scenario.name, rep as u64);
    let (train, test) = generate(scenario, rep_seed);
    let objective: BTreeSet<String> = scenario.small_group_labels().into_iter().collect();
    let large_objective: Option<BTreeSet<String>> = config.dual_tuning.then(|| {
        scenario
            .groups
            .iter()
            .filter(|g| g.role == GroupRole::Large)
            .map(|g| g.label.clone())
            .collect()
    });
    let mut rows = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        let (method_rows, _) = evaluate_method(
            experiment,
            &scenario.name,
            axis_value,
            rep,
            method,
            mi,
            config.folds,
            rep_seed,
            &objective,
            large_objective.as_ref(),
            &train,
            &test,
        )?;
        rows.extend(method_rows);
    }
    Ok(rows)
}

/// Reference-scenario comparison: R tuned replications of every method,
/// with mean test MSE and 95% CI per method and group.
pub fn run_base_case(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = base_case();
    let nested: Vec<Vec<ResultRow>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| simulated_replication("base-case", &scenario, None, config, rep))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = nested.into_iter().flatten().collect();
    sort_rows(&mut rows);
    let summaries = summarize_test(&rows);
    Ok(ExperimentOutput {
        rows,
        summaries,
        ..Default::default()
    })
}

/// One-axis sweep around the reference scenario, long-form output.
pub fn run_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: Option<Vec<f64>>,
) -> Result<ExperimentOutput> {
    let sweep = sweep(axis, values)?;
    let experiment = format!("sweep:{}", axis.name());
    let tasks: Vec<(usize, usize)> = (0..sweep.scenarios.len())
        .flat_map(|s| (0..config.replications).map(move |r| (s, r)))
        .collect();
    let nested: Vec<Vec<ResultRow>> = tasks
        .into_par_iter()
        .map(|(s, rep)| {
            simulated_replication(
                &experiment,
                &sweep.scenarios[s],
                Some(sweep.values[s]),
                config,
                rep,
            )
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = nested.into_iter().flatten().collect();
    sort_rows(&mut rows);
    let summaries = summarize_test(&rows);
    Ok(ExperimentOutput {
        rows,
        summaries,
        ..Default::default()
    })
}

/// Real-data protocol: per replication, sample disjoint train/test subsets
/// of the two designated groups without replacement, tune every method on
/// the training sample, and evaluate on the held-out sample. Exports the
/// replication-0 interaction-model coefficients on the original scale.
pub fn run_real_data(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let path = config
        .data_path
        .as_ref()
        .ok_or_else(|| anyhow!("real-data requires a dataset path"))?;
    let data = load_csv(path, &config.outcome_col, &config.group_col)?;
    let large = config
        .large_label
        .as_ref()
        .ok_or_else(|| anyhow!("real-data requires --large-label"))?;
    let small = config
        .small_label
        .as_ref()
        .ok_or_else(|| anyhow!("real-data requires --small-label"))?;
    let large_pos = data
        .group_position(large)
        .ok_or_else(|| anyhow!("group `{large}` not present in `{}`", path.display()))?;
    let small_pos = data
        .group_position(small)
        .ok_or_else(|| anyhow!("group `{small}` not present in `{}`", path.display()))?;
    for (gid, pos, need) in [
        (large, large_pos, config.train_large + config.test_per_group),
        (small, small_pos, config.train_small + config.test_per_group),
    ] {
        let have = data.group_rows(pos).len();
        if have < need {
            bail!("group `{gid}` has {have} rows, needs {need} for the requested sample sizes");
        }
    }

    let objective: BTreeSet<String> = [small.clone()].into_iter().collect();
    let results: Vec<(Vec<ResultRow>, Option<CoefficientExport>)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<ResultRow>, Option<CoefficientExport>)> {
            let rep_seed = derive_seed(config.seed, "real-data", rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
            let mut large_rows = data.group_rows(large_pos).to_vec();
            let mut small_rows = data.group_rows(small_pos).to_vec();
            large_rows.shuffle(&mut rng);
            small_rows.shuffle(&mut rng);

            let mut train_rows: Vec<usize> = large_rows[..config.train_large].to_vec();
            train_rows.extend_from_slice(&small_rows[..config.train_small]);
            train_rows.sort_unstable();
            let mut test_rows: Vec<usize> = large_rows
                [config.train_large..config.train_large + config.test_per_group]
                .to_vec();
            test_rows.extend_from_slice(
                &small_rows[config.train_small..config.train_small + config.test_per_group],
            );
            test_rows.sort_unstable();

            let train = data.restrict_rows(&train_rows)?;
            let test = data.restrict_rows(&test_rows)?;

            let mut rows = Vec::new();
            let mut export = None;
            for (mi, &method) in config.methods.iter().enumerate() {
                let (method_rows, model) = evaluate_method(
                    "real-data",
                    "real-data",
                    None,
                    rep,
                    method,
                    mi,
                    config.folds,
                    rep_seed,
                    &objective,
                    None,
                    &train,
                    &test,
                )?;
                rows.extend(method_rows);
                if rep == 0 && method == Method::Fair {
                    if let FittedModel::Fair(fair) = &model {
                        export = Some(export_fair_coefficients(fair));
                    }
                }
            }
            Ok((rows, export))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut coefficients = None;
    for (r, export) in results {
        rows.extend(r);
        if coefficients.is_none() {
            coefficients = export;
        }
    }
    sort_rows(&mut rows);
    let summaries = summarize_test(&rows);
    Ok(ExperimentOutput {
        rows,
        summaries,
        coefficients,
        ..Default::default()
    })
}

/// Mid-grid hyperparameters used for timing: fixed before any timed region.
fn timing_params(data: &GroupedDataset, method: Method) -> Result<HyperParams> {
    Ok(match default_grid(method, data)? {
        Grid::Fair(axes) => HyperParams::Fair(
            axes.iter()
                .map(|(g, v)| (g.clone(), v[v.len() / 2]))
                .collect(),
        ),
        Grid::Separate(axes) => HyperParams::Separate(
            axes.iter()
                .map(|(g, v)| (g.clone(), v[v.len() / 2]))
                .collect(),
        ),
        Grid::Indicator(v) => HyperParams::Indicator {
            lambda: v[v.len() / 2],
        },
        Grid::Joint { lambdas, gammas } => HyperParams::Joint {
            lambda: lambdas[lambdas.len() / 2],
            gamma: gammas[1 + (gammas.len() - 1) / 2],
        },
    })
}

/// Wall-time per method, averaged over `replications` fits at fixed
/// hyperparameters. Data generation and grid derivation happen before the
/// clock starts; only the fit call is inside the timed region.
pub fn run_timing(config: &ExperimentConfig, clock: &dyn Clock) -> Result<ExperimentOutput> {
    let mut datasets: Vec<(String, GroupedDataset)> = Vec::new();
    let scenario = base_case();
    let (train, _) = generate(&scenario, derive_seed(config.seed, "timing", 0));
    datasets.push(("simulation".to_string(), train));
    if let Some(path) = &config.data_path {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "dataset".to_string());
        datasets.push((name, load_csv(path, &config.outcome_col, &config.group_col)?));
    }

    let mut timing = Vec::new();
    for (name, data) in &datasets {
        for &method in &config.methods {
            let params = timing_params(data, method)?;
            let mean_seconds = measure(clock, 2, config.replications, || {
                refit(data, &params, &settings()).expect("timing fit failed");
            });
            timing.push(TimingRow {
                method: method.name().to_string(),
                dataset: name.clone(),
                mean_seconds,
                replications: config.replications,
            });
        }
    }
    Ok(ExperimentOutput {
        timing,
        ..Default::default()
    })
}

/// Writes a scenario's train/test pair as CSV files.
pub fn emit_scenario_csvs(
    scenario: &SimulationScenario,
    seed: u64,
    out_dir: &Path,
    outcome_col: &str,
    group_col: &str,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create `{}`", out_dir.display()))?;
    let (train, test) = generate(scenario, seed);
    let train_path = out_dir.join("train.csv");
    let test_path = out_dir.join("test.csv");
    write_dataset_csv(&train_path, &train, outcome_col, group_col)?;
    write_dataset_csv(&test_path, &test, outcome_col, group_col)?;
    Ok((train_path, test_path))
}
