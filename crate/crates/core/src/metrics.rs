//! Prediction-error metrics.

use std::collections::BTreeMap;

use ndarray::ArrayView1;

use crate::data::GroupedDataset;
use crate::error::{Error, Result};

/// Mean squared error between two equal-length vectors.
pub fn mse(predicted: ArrayView1<'_, f64>, actual: ArrayView1<'_, f64>) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("mse on empty vectors".into()));
    }
    if predicted.len() != actual.len() {
        return Err(Error::ShapeMismatch(format!(
            "mse length mismatch: {} vs {}",
            predicted.len(),
            actual.len()
        )));
    }
    let sum: f64 = predicted
        .iter()
        .zip(actual.iter())
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// MSE computed over each group's samples only, keyed by group id.
pub fn group_mse(
    predictions: ArrayView1<'_, f64>,
    data: &GroupedDataset,
) -> Result<BTreeMap<String, f64>> {
    if predictions.len() != data.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} samples",
            predictions.len(),
            data.n()
        )));
    }
    let outcome = data.outcome();
    let mut out = BTreeMap::new();
    for (k, id) in data.group_ids().iter().enumerate() {
        let sum: f64 = data
            .group_rows(k)
            .iter()
            .map(|&r| {
                let e = predictions[r] - outcome[r];
                e * e
            })
            .sum();
        out.insert(id.clone(), sum / data.group_rows(k).len() as f64);
    }
    Ok(out)
}
