//! Result tables, summaries with confidence intervals, and exports.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use fair_core::models::FairModel;
use serde::{Deserialize, Serialize};

/// One evaluation record: a (method, replication, group, split) cell of an
/// experiment, plus the hyperparameters it was fit with. Wall-clock fit time
/// is carried in memory but written to a separate file so the main result
/// table is byte-reproducible under a fixed seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub scenario: String,
    pub axis_value: Option<f64>,
    pub replication: usize,
    pub group: String,
    pub split: String,
    pub mse: f64,
    pub hyperparams: String,
    pub tuning: String,
    #[serde(skip)]
    pub fit_seconds: f64,
    pub solver_sweeps: usize,
    pub solver_converged: bool,
}

/// Deterministic output order: method, scenario, replication, then the
/// generation order of (group, split) within a replication.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (&a.method, &a.scenario, a.replication)
            .cmp(&(&b.method, &b.scenario, b.replication))
    });
}

pub fn write_rows_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("cannot create `{}`", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-replication fit wall times, one file apart from the result table.
pub fn write_fit_times_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("cannot create `{}`", path.display()))?;
    writer.write_record(["experiment", "method", "scenario", "replication", "fit_seconds"])?;
    let mut seen = std::collections::BTreeSet::new();
    for row in rows {
        let key = (
            row.experiment.clone(),
            row.method.clone(),
            row.scenario.clone(),
            row.replication,
            row.tuning.clone(),
        );
        if seen.insert(key) {
            writer.write_record(&[
                row.experiment.clone(),
                row.method.clone(),
                row.scenario.clone(),
                row.replication.to_string(),
                format!("{}", row.fit_seconds),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Sample mean with a normal-approximation 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ci {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Ci {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n > 1 {
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            half_width,
            n,
        }
    }

    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.low() && value <= self.high()
    }

    pub fn overlaps(&self, other: &Ci) -> bool {
        self.low() <= other.high() && other.low() <= self.high()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub scenario: String,
    pub axis_value: Option<f64>,
    pub method: String,
    pub group: String,
    pub tuning: String,
    pub mean_mse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replications: usize,
}

/// Test-split summaries keyed by (scenario, method, group, tuning objective).
pub fn summarize_test(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut buckets: BTreeMap<(String, String, String, String), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.split == "test") {
        buckets
            .entry((
                row.scenario.clone(),
                row.method.clone(),
                row.group.clone(),
                row.tuning.clone(),
            ))
            .or_default()
            .push(row);
    }
    buckets
        .into_iter()
        .map(|((scenario, method, group, tuning), rows)| {
            let values: Vec<f64> = rows.iter().map(|r| r.mse).collect();
            let ci = Ci::from_samples(&values);
            SummaryRow {
                experiment: rows[0].experiment.clone(),
                scenario,
                axis_value: rows[0].axis_value,
                method,
                group,
                tuning,
                mean_mse: ci.mean,
                ci_low: ci.low(),
                ci_high: ci.high(),
                replications: ci.n,
            }
        })
        .collect()
}

/// Aligned text table of summaries.
pub fn render_summary_table(summaries: &[SummaryRow]) -> String {
    let header = [
        "scenario", "method", "group", "tuning", "mean_mse", "ci_low", "ci_high", "n",
    ];
    let mut cells: Vec<[String; 8]> = vec![header.map(str::to_string)];
    for s in summaries {
        cells.push([
            s.scenario.clone(),
            s.method.clone(),
            s.group.clone(),
            s.tuning.clone(),
            format!("{:.6}", s.mean_mse),
            format!("{:.6}", s.ci_low),
            format!("{:.6}", s.ci_high),
            s.replications.to_string(),
        ]);
    }
    let mut widths = [0usize; 8];
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}", w = w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn write_summary(path: &Path, summaries: &[SummaryRow]) -> Result<()> {
    std::fs::write(path, render_summary_table(summaries))
        .with_context(|| format!("cannot write `{}`", path.display()))?;
    Ok(())
}

/// Original-scale coefficient table of a fitted interaction model: one row
/// per feature (plus the intercept row), one column for the base block and
/// one per non-base group block.
#[derive(Debug, Clone)]
pub struct CoefficientExport {
    pub base_group: String,
    pub group_order: Vec<String>,
    /// (feature name, base value, per-group values)
    pub rows: Vec<(String, f64, Vec<f64>)>,
}

pub fn export_fair_coefficients(model: &FairModel) -> CoefficientExport {
    let group_order: Vec<String> = model.groups.keys().cloned().collect();
    let mut rows = Vec::with_capacity(model.feature_names.len() + 1);
    rows.push((
        "(intercept)".to_string(),
        model.base.intercept,
        group_order
            .iter()
            .map(|g| model.groups[g].intercept)
            .collect(),
    ));
    for (j, name) in model.feature_names.iter().enumerate() {
        rows.push((
            name.clone(),
            model.base.weights[j],
            group_order
                .iter()
                .map(|g| model.groups[g].weights[j])
                .collect(),
        ));
    }
    CoefficientExport {
        base_group: model.base_group.clone(),
        group_order,
        rows,
    }
}

pub fn write_coefficients_csv(path: &Path, export: &CoefficientExport) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("cannot create `{}`", path.display()))?;
    let mut header = vec!["feature".to_string(), format!("base[{}]", export.base_group)];
    header.extend(export.group_order.iter().cloned());
    writer.write_record(&header)?;
    for (feature, base, groups) in &export.rows {
        let mut record = vec![feature.clone(), format!("{base}")];
        record.extend(groups.iter().map(|v| format!("{v}")));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Timing harness output: one row per (method, dataset).
#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    #[serde(rename = "Method")]
    pub method: String,
    #[serde(rename = "Dataset")]
    pub dataset: String,
    #[serde(rename = "MeanSeconds")]
    pub mean_seconds: f64,
    #[serde(rename = "Replications")]
    pub replications: usize,
}

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("cannot create `{}`", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_matches_hand_computation() {
        // samples 1..5: mean 3, sd sqrt(2.5), half = 1.96*sqrt(2.5/5)
        let ci = Ci::from_samples(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((ci.mean - 3.0).abs() < 1e-12);
        assert!((ci.half_width - 1.96 * (2.5f64 / 5.0).sqrt()).abs() < 1e-12);
        assert!(ci.contains(3.5));
        assert!(!ci.contains(10.0));

        let other = Ci {
            mean: 4.0,
            half_width: 0.1,
            n: 5,
        };
        assert!(ci.overlaps(&other));
        let far = Ci {
            mean: 40.0,
            half_width: 0.1,
            n: 5,
        };
        assert!(!ci.overlaps(&far));
    }

    #[test]
    fn summary_table_is_aligned_and_sorted() {
        let rows = vec![
            ResultRow {
                experiment: "base-case".into(),
                method: "fair".into(),
                scenario: "base".into(),
                axis_value: None,
                replication: 0,
                group: "small".into(),
                split: "test".into(),
                mse: 1.25,
                hyperparams: "lambda=0.1".into(),
                tuning: "small".into(),
                fit_seconds: 0.0,
                solver_sweeps: 10,
                solver_converged: true,
            },
            ResultRow {
                experiment: "base-case".into(),
                method: "fair".into(),
                scenario: "base".into(),
                axis_value: None,
                replication: 1,
                group: "small".into(),
                split: "test".into(),
                mse: 1.75,
                hyperparams: "lambda=0.1".into(),
                tuning: "small".into(),
                fit_seconds: 0.0,
                solver_sweeps: 12,
                solver_converged: true,
            },
        ];
        let summaries = summarize_test(&rows);
        assert_eq!(summaries.len(), 1);
        assert!((summaries[0].mean_mse - 1.5).abs() < 1e-12);
        let table = render_summary_table(&summaries);
        assert!(table.starts_with("scenario"));
        assert!(table.contains("fair"));
    }
}
