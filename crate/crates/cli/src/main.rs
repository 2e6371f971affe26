use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use fair_cli::clock::SystemClock;
use fair_cli::experiments::{
    emit_scenario_csvs, parse_methods_csv, run_base_case, run_real_data, run_sweep, run_timing,
    ConfigFile, ExperimentConfig,
};
use fair_cli::io::{load_csv, load_model, save_model, write_predictions_csv};
use fair_cli::report::render_summary_table;
use fair_core::simgen::{base_case, sweep_scenarios, SimulationScenario, SweepAxis};
use fair_core::solver::SolverSettings;
use fair_core::tune::{tune, HyperParams, Method, TuningSpec};

/// Grouped-penalty regression experiments: a weighted interaction lasso
/// with per-group penalties, a fused joint lasso, and two baselines, under
/// a simulation, tuning, and benchmarking harness.
#[derive(Parser)]
#[command(name = "fair", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for all derived random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated methods: fair,separate,indicator,joint.
    #[arg(long)]
    methods: Option<String>,
    /// Output directory for result files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataOpts {
    /// Dataset CSV path.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    outcome_col: String,
    /// Group label column name.
    #[arg(long, default_value = "group")]
    group_col: String,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a scenario's train/test CSV files.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Sweep axis to draw the scenario from (default: the base case).
        #[arg(long)]
        axis: Option<String>,
        /// Axis value (required with --axis).
        #[arg(long)]
        value: Option<f64>,
        /// Override the large-group training size.
        #[arg(long)]
        train_large: Option<usize>,
        /// Override the small-group training size.
        #[arg(long)]
        train_small: Option<usize>,
        /// Override the per-group test size.
        #[arg(long)]
        test_per_group: Option<usize>,
        #[arg(long, default_value = "y")]
        outcome_col: String,
        #[arg(long, default_value = "group")]
        group_col: String,
    },
    /// Fit one model at explicit hyperparameters and save it.
    Fit {
        #[command(flatten)]
        data: DataOpts,
        /// Method: fair, separate, indicator, or joint.
        #[arg(long)]
        method: String,
        /// Global lambda (default for every group axis).
        #[arg(long)]
        lambda: Option<f64>,
        /// Per-group lambda override, LABEL=VALUE; repeatable.
        #[arg(long = "lambda-group")]
        lambda_group: Vec<String>,
        /// Fusion strength (joint lasso only).
        #[arg(long)]
        gamma: Option<f64>,
        /// Model file to write.
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Cross-validated grid search; writes the grid table and tuned model.
    Tune {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        method: String,
        /// Objective group label; repeatable for several small groups.
        #[arg(long = "small-label", required = true)]
        small_labels: Vec<String>,
    },
    /// Reference-scenario comparison of the methods.
    BaseCase {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// One-axis parameter sweep around the reference scenario.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Axis name: small-group-size, large-group-size, small-group-noise,
        /// unshared-value, num-unshared, num-uninformative,
        /// num-large-groups, or num-small-groups.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (default: the built-in grid).
        #[arg(long)]
        values: Option<String>,
        /// Also report models selected by large-group MSE.
        #[arg(long)]
        dual_tuning: bool,
    },
    /// Sampling protocol on a tabular dataset with one large and one small
    /// group.
    RealData {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        data: DataOpts,
        #[arg(long)]
        large_label: String,
        #[arg(long)]
        small_label: String,
        #[arg(long)]
        train_large: Option<usize>,
        #[arg(long)]
        train_small: Option<usize>,
        #[arg(long)]
        test_per_group: Option<usize>,
    },
    /// Mean fit wall-time per method at fixed hyperparameters.
    Timing {
        #[command(flatten)]
        common: CommonOpts,
        /// Optional dataset CSV to time in addition to the simulation.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "y")]
        outcome_col: String,
        #[arg(long, default_value = "group")]
        group_col: String,
    },
    /// Predict a dataset under a saved model.
    Predict {
        /// Model file written by `fit` or `tune`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataOpts,
        /// Output CSV path.
        #[arg(long, default_value = "predictions.csv")]
        out: PathBuf,
        /// Predict unseen groups from the shared block instead of erroring.
        #[arg(long)]
        fallback: bool,
    },
}

fn build_config(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &common.config {
        ConfigFile::load(path)?.apply(&mut config)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(reps) = common.replications {
        config.replications = reps;
    }
    if let Some(folds) = common.folds {
        config.folds = folds;
    }
    if let Some(methods) = &common.methods {
        config.methods = parse_methods_csv(methods)?;
    }
    Ok(config)
}

fn out_dir(common: &CommonOpts) -> PathBuf {
    common
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn pick_scenario(axis: &Option<String>, value: Option<f64>) -> Result<SimulationScenario> {
    match axis {
        None => Ok(base_case()),
        Some(axis) => {
            let axis: SweepAxis = axis.parse()?;
            let value = value.ok_or_else(|| anyhow!("--axis requires --value"))?;
            Ok(sweep_scenarios(axis, &[value])?.remove(0))
        }
    }
}

fn parse_lambda_overrides(specs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for spec in specs {
        let (label, value) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--lambda-group expects LABEL=VALUE, got `{spec}`"))?;
        let value: f64 = value
            .parse()
            .map_err(|_| anyhow!("invalid lambda value in `{spec}`"))?;
        out.insert(label.to_string(), value);
    }
    Ok(out)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let settings = SolverSettings::default();
    match cli.command {
        Command::Simulate {
            common,
            axis,
            value,
            train_large,
            train_small,
            test_per_group,
            outcome_col,
            group_col,
        } => {
            let config = build_config(&common)?;
            let mut scenario = pick_scenario(&axis, value)?;
            for group in &mut scenario.groups {
                use fair_core::simgen::GroupRole;
                match group.role {
                    GroupRole::Large => {
                        if let Some(n) = train_large {
                            group.size = n;
                        }
                    }
                    GroupRole::Small => {
                        if let Some(n) = train_small {
                            group.size = n;
                        }
                    }
                }
            }
            if let Some(n) = test_per_group {
                scenario.test_size_per_group = n;
            }
            let dir = out_dir(&common);
            let (train, test) =
                emit_scenario_csvs(&scenario, config.seed, &dir, &outcome_col, &group_col)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
        Command::Fit {
            data,
            method,
            lambda,
            lambda_group,
            gamma,
            out,
        } => {
            let method: Method = method.parse()?;
            let dataset = load_csv(&data.data, &data.outcome_col, &data.group_col)?;
            let overrides = parse_lambda_overrides(&lambda_group)?;
            let per_group = |what: &str| -> Result<BTreeMap<String, f64>> {
                let mut map = BTreeMap::new();
                for gid in dataset.group_ids() {
                    let value = overrides.get(gid).copied().or(lambda).ok_or_else(|| {
                        anyhow!("{what} needs --lambda or --lambda-group {gid}=VALUE")
                    })?;
                    map.insert(gid.clone(), value);
                }
                Ok(map)
            };
            let params = match method {
                Method::Fair => HyperParams::Fair(per_group("fair")?),
                Method::Separate => HyperParams::Separate(per_group("separate")?),
                Method::Indicator => HyperParams::Indicator {
                    lambda: lambda.ok_or_else(|| anyhow!("indicator needs --lambda"))?,
                },
                Method::Joint => HyperParams::Joint {
                    lambda: lambda.ok_or_else(|| anyhow!("joint needs --lambda"))?,
                    gamma: gamma.unwrap_or(0.0),
                },
            };
            let model = fair_core::tune::refit(&dataset, &params, &settings)?;
            let (sweeps, converged) = model.diagnostics_summary();
            save_model(&out, &model)?;
            println!(
                "fitted {method} ({params}); sweeps={sweeps} converged={converged}; wrote {}",
                out.display()
            );
        }
        Command::Tune {
            common,
            data,
            method,
            small_labels,
        } => {
            let config = build_config(&common)?;
            let method: Method = method.parse()?;
            let dataset = load_csv(&data.data, &data.outcome_col, &data.group_col)?;
            let objective: BTreeSet<String> = small_labels.into_iter().collect();
            let spec = TuningSpec {
                method,
                folds: config.folds,
                grid: None,
                objective_groups: objective,
                seed: config.seed,
            };
            let report = tune(&dataset, &spec, &settings)?;
            let dir = out_dir(&common);
            std::fs::create_dir_all(&dir)?;
            let grid_path = dir.join("tuning.csv");
            let mut writer = csv::Writer::from_path(&grid_path)?;
            writer.write_record([
                "params",
                "mean_objective",
                "rank",
                "valid",
                "fold_objectives",
                "error",
            ])?;
            for e in &report.entries {
                writer.write_record(&[
                    e.params.to_string(),
                    if e.valid {
                        format!("{}", e.mean_objective)
                    } else {
                        String::new()
                    },
                    if e.rank == usize::MAX {
                        String::new()
                    } else {
                        e.rank.to_string()
                    },
                    e.valid.to_string(),
                    e.fold_objective
                        .iter()
                        .map(|v| format!("{v}"))
                        .collect::<Vec<_>>()
                        .join(";"),
                    e.error.clone().unwrap_or_default(),
                ])?;
            }
            writer.flush()?;
            let model_path = dir.join("model.json");
            save_model(&model_path, &report.model)?;
            println!(
                "selected {}; wrote {} and {}",
                report.selected,
                grid_path.display(),
                model_path.display()
            );
        }
        Command::BaseCase { common } => {
            let config = build_config(&common)?;
            let output = run_base_case(&config)?;
            let written = output.write(&out_dir(&common))?;
            print!("{}", render_summary_table(&output.summaries));
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
            dual_tuning,
        } => {
            let mut config = build_config(&common)?;
            config.dual_tuning = config.dual_tuning || dual_tuning;
            let axis: SweepAxis = axis.parse()?;
            let values = match values {
                None => None,
                Some(list) => Some(
                    list.split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<f64>, _>>()
                        .map_err(|_| anyhow!("invalid --values list"))?,
                ),
            };
            let output = run_sweep(&config, axis, values)?;
            let written = output.write(&out_dir(&common))?;
            print!("{}", render_summary_table(&output.summaries));
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::RealData {
            common,
            data,
            large_label,
            small_label,
            train_large,
            train_small,
            test_per_group,
        } => {
            let mut config = build_config(&common)?;
            if common.replications.is_none() {
                // match the reference protocol scale unless overridden
                config.replications = 250;
            }
            config.data_path = Some(data.data.clone());
            config.outcome_col = data.outcome_col.clone();
            config.group_col = data.group_col.clone();
            config.large_label = Some(large_label);
            config.small_label = Some(small_label);
            if let Some(v) = train_large {
                config.train_large = v;
            }
            if let Some(v) = train_small {
                config.train_small = v;
            }
            if let Some(v) = test_per_group {
                config.test_per_group = v;
            }
            let output = run_real_data(&config)?;
            let written = output.write(&out_dir(&common))?;
            print!("{}", render_summary_table(&output.summaries));
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Timing {
            common,
            data,
            outcome_col,
            group_col,
        } => {
            let mut config = build_config(&common)?;
            config.data_path = data;
            config.outcome_col = outcome_col;
            config.group_col = group_col;
            let clock = SystemClock::new();
            let output = run_timing(&config, &clock)?;
            for row in &output.timing {
                println!(
                    "{:<10} {:<12} {:.6} s (over {} runs)",
                    row.method, row.dataset, row.mean_seconds, row.replications
                );
            }
            let written = output.write(&out_dir(&common))?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Predict {
            model,
            data,
            out,
            fallback,
        } => {
            let model = load_model(&model)?;
            let dataset = load_csv(&data.data, &data.outcome_col, &data.group_col)?;
            use fair_core::models::{GroupedPredictor, UnseenGroupPolicy};
            let policy = if fallback {
                UnseenGroupPolicy::Fallback
            } else {
                UnseenGroupPolicy::Error
            };
            let preds = model.predict_with(dataset.features(), &dataset.group_labels(), policy)?;
            write_predictions_csv(&out, &dataset, &preds)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
