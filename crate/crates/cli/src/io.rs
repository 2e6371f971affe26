//! Dataset CSV loading/saving and model file round-trips.
//!
//! Dataset schema: UTF-8 CSV with a header row; one outcome column, one
//! group column (read as strings), every other column a numeric covariate
//! (booleans as 0/1, categoricals pre-encoded). Column and row order are
//! preserved. Model files are versioned JSON documents; floats print in
//! shortest round-trip form, so save/load is exact.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fair_core::models::GroupedPredictor;
use fair_core::tune::FittedModel;
use fair_core::GroupedDataset;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub fn load_csv(path: &Path, outcome_col: &str, group_col: &str) -> Result<GroupedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open dataset `{}`", path.display()))?;
    let headers = reader
        .headers()
        .with_context(|| format!("cannot read header of `{}`", path.display()))?
        .clone();
    let outcome_idx = headers
        .iter()
        .position(|h| h == outcome_col)
        .ok_or_else(|| anyhow!("`{}` has no column `{outcome_col}`", path.display()))?;
    let group_idx = headers
        .iter()
        .position(|h| h == group_col)
        .ok_or_else(|| anyhow!("`{}` has no column `{group_col}`", path.display()))?;
    if outcome_idx == group_idx {
        bail!("outcome and group columns must differ");
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != outcome_idx && i != group_idx)
        .collect();
    let feature_names: Vec<String> = feature_cols
        .iter()
        .map(|&i| headers[i].to_string())
        .collect();

    let mut features: Vec<f64> = Vec::new();
    let mut outcome: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record =
            record.with_context(|| format!("cannot read `{}` row {}", path.display(), row_idx + 1))?;
        if record.len() != headers.len() {
            bail!(
                "`{}` row {}: expected {} fields, found {}",
                path.display(),
                row_idx + 1,
                headers.len(),
                record.len()
            );
        }
        let parse = |col: usize| -> Result<f64> {
            let raw = &record[col];
            let v: f64 = raw.trim().parse().map_err(|_| {
                anyhow!(
                    "`{}` row {}, column `{}`: invalid numeric value `{raw}`",
                    path.display(),
                    row_idx + 1,
                    headers[col].to_string()
                )
            })?;
            if !v.is_finite() {
                bail!(
                    "`{}` row {}, column `{}`: non-finite value",
                    path.display(),
                    row_idx + 1,
                    headers[col].to_string()
                );
            }
            Ok(v)
        };
        outcome.push(parse(outcome_idx)?);
        labels.push(record[group_idx].to_string());
        for &col in &feature_cols {
            features.push(parse(col)?);
        }
    }
    if outcome.is_empty() {
        bail!("`{}` has no data rows", path.display());
    }
    let n = outcome.len();
    let m = feature_cols.len();
    let features = Array2::from_shape_vec((n, m), features).expect("row-major feature buffer");
    GroupedDataset::with_feature_names(features, Array1::from(outcome), &labels, feature_names)
        .map_err(|e| anyhow!("`{}`: {e}", path.display()))
}

/// Writes `[features..., outcome, group]` with full float precision, so a
/// save/load round trip is bit-exact.
pub fn write_dataset_csv(
    path: &Path,
    data: &GroupedDataset,
    outcome_col: &str,
    group_col: &str,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create `{}`", path.display()))?;
    let mut header: Vec<String> = data.feature_names().to_vec();
    header.push(outcome_col.to_string());
    header.push(group_col.to_string());
    writer.write_record(&header)?;
    let x = data.features();
    let y = data.outcome();
    for i in 0..data.n() {
        let mut record: Vec<String> = (0..data.m()).map(|j| format!("{}", x[[i, j]])).collect();
        record.push(format!("{}", y[i]));
        record.push(data.group_label(i).to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

const MODEL_FORMAT: &str = "fair-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    format: String,
    version: u32,
    kind: String,
    model: FittedModel,
}

pub fn save_model(path: &Path, model: &FittedModel) -> Result<()> {
    let envelope = ModelEnvelope {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        kind: model.method().name().to_string(),
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&envelope)?;
    fs::write(path, text).with_context(|| format!("cannot write `{}`", path.display()))?;
    Ok(())
}

fn check_block(
    what: &str,
    block: &fair_core::CoefficientBlock,
    m: usize,
) -> Result<()> {
    if block.num_weights() != m || block.penalized_mask.len() != m {
        bail!("{what} holds {} weights for {m} covariates", block.num_weights());
    }
    Ok(())
}

/// Internal consistency of a deserialized model: every coefficient block
/// matches the declared covariate count.
fn validate_model(model: &FittedModel) -> Result<()> {
    match model {
        FittedModel::Fair(m) => {
            let k = m.feature_names.len();
            check_block("base block", &m.base, k)?;
            if m.scaling.m() != k {
                bail!("scaling record covers {} covariates, expected {k}", m.scaling.m());
            }
            for (gid, block) in &m.groups {
                check_block(&format!("group `{gid}` block"), block, k)?;
            }
            if m.groups.contains_key(&m.base_group) {
                bail!("base group `{}` also has an interaction block", m.base_group);
            }
        }
        FittedModel::Separate(m) => {
            let k = m.feature_names.len();
            for (gid, fit) in &m.models {
                check_block(&format!("group `{gid}` block"), &fit.block, k)?;
            }
        }
        FittedModel::Indicator(m) => {
            let k = m.feature_names.len();
            check_block("coefficient block", &m.coef, k)?;
        }
        FittedModel::Joint(m) => {
            let k = m.feature_names.len();
            for (gid, block) in &m.blocks {
                check_block(&format!("group `{gid}` block"), block, k)?;
            }
        }
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read `{}`", path.display()))?;
    let envelope: ModelEnvelope = serde_json::from_str(&text)
        .with_context(|| format!("`{}` is not a valid model file", path.display()))?;
    if envelope.format != MODEL_FORMAT {
        bail!("`{}` is not a model file (format `{}`)", path.display(), envelope.format);
    }
    if envelope.version != MODEL_VERSION {
        bail!(
            "`{}` has unsupported model version {} (expected {MODEL_VERSION})",
            path.display(),
            envelope.version
        );
    }
    if envelope.kind != envelope.model.method().name() {
        bail!(
            "`{}` declares kind `{}` but holds a `{}` model",
            path.display(),
            envelope.kind,
            envelope.model.method().name()
        );
    }
    validate_model(&envelope.model)
        .with_context(|| format!("`{}` failed shape validation", path.display()))?;
    Ok(envelope.model)
}

/// Writes predictions (with actual outcomes for reference) for a dataset.
pub fn write_predictions_csv(
    path: &Path,
    data: &GroupedDataset,
    predictions: &Array1<f64>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create `{}`", path.display()))?;
    writer.write_record(["row", "group", "outcome", "prediction"])?;
    for i in 0..data.n() {
        writer.write_record(&[
            i.to_string(),
            data.group_label(i).to_string(),
            format!("{}", data.outcome()[i]),
            format!("{}", predictions[i]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Convenience: predictions for a loaded dataset under a loaded model.
pub fn predict_dataset(model: &FittedModel, data: &GroupedDataset) -> Result<Array1<f64>> {
    Ok(model.predict_dataset(data)?)
}
