//! Shared domain types: grouped datasets, coefficient blocks, fit diagnostics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A regression dataset with a group label attached to every sample.
///
/// Group ids are opaque strings ordered by first appearance in the data;
/// all per-group vectors produced elsewhere follow this order. Construction
/// rejects non-finite features or outcomes, so downstream code may assume
/// finite data. Immutable after construction and safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct GroupedDataset {
    features: Array2<f64>,
    outcome: Array1<f64>,
    group_index: Vec<usize>,
    group_ids: Vec<String>,
    group_sizes: Vec<usize>,
    group_rows: Vec<Vec<usize>>,
    feature_names: Vec<String>,
}

impl GroupedDataset {
    /// Builds a dataset from a feature matrix, outcome vector, and one group
    /// label per row. Feature names default to `x0..x{m-1}`.
    pub fn new(features: Array2<f64>, outcome: Array1<f64>, labels: &[String]) -> Result<Self> {
        let names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_feature_names(features, outcome, labels, names)
    }

    pub fn with_feature_names(
        features: Array2<f64>,
        outcome: Array1<f64>,
        labels: &[String],
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        if outcome.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "features have {n} rows but outcome has {} entries",
                outcome.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "features have {n} rows but {} group labels given",
                labels.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "features",
                    row,
                    col,
                });
            }
        }
        for (row, v) in outcome.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "outcome",
                    row,
                    col: 0,
                });
            }
        }

        let mut group_ids: Vec<String> = Vec::new();
        let mut group_index = Vec::with_capacity(n);
        for label in labels {
            let idx = match group_ids.iter().position(|g| g == label) {
                Some(idx) => idx,
                None => {
                    group_ids.push(label.clone());
                    group_ids.len() - 1
                }
            };
            group_index.push(idx);
        }
        let mut group_rows = vec![Vec::new(); group_ids.len()];
        for (row, &g) in group_index.iter().enumerate() {
            group_rows[g].push(row);
        }
        let group_sizes = group_rows.iter().map(Vec::len).collect();

        Ok(Self {
            features,
            outcome,
            group_index,
            group_ids,
            group_sizes,
            group_rows,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Number of covariates.
    pub fn m(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn outcome(&self) -> ArrayView1<'_, f64> {
        self.outcome.view()
    }

    /// Group ids in order of first appearance.
    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// Per-row index into `group_ids`.
    pub fn group_index(&self) -> &[usize] {
        &self.group_index
    }

    pub fn group_label(&self, row: usize) -> &str {
        &self.group_ids[self.group_index[row]]
    }

    /// Per-row group labels, one per sample.
    pub fn group_labels(&self) -> Vec<String> {
        self.group_index
            .iter()
            .map(|&g| self.group_ids[g].clone())
            .collect()
    }

    /// Row indices belonging to group `k` (dataset group order).
    pub fn group_rows(&self, k: usize) -> &[usize] {
        &self.group_rows[k]
    }

    pub fn group_position(&self, id: &str) -> Option<usize> {
        self.group_ids.iter().position(|g| g == id)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// New dataset holding the given rows (in the given order). Group order
    /// is re-derived by first appearance, so pass rows sorted ascending to
    /// preserve the parent ordering.
    pub fn restrict_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("row subset is empty".into()));
        }
        let features = self.features.select(Axis(0), rows);
        let outcome = self.outcome.select(Axis(0), rows);
        let labels: Vec<String> = rows
            .iter()
            .map(|&r| self.group_ids[self.group_index[r]].clone())
            .collect();
        Self::with_feature_names(features, outcome, &labels, self.feature_names.clone())
    }

    /// Single-group dataset for `id`.
    pub fn restrict_to_group(&self, id: &str) -> Result<Self> {
        let k = self
            .group_position(id)
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))?;
        self.restrict_rows(&self.group_rows[k].clone())
    }
}

/// One intercept plus a weight per covariate, with a mask recording which
/// weights the sparsity penalty applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBlock {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub penalized_mask: Vec<bool>,
}

impl CoefficientBlock {
    pub fn new(intercept: f64, weights: Vec<f64>, penalized_mask: Vec<bool>) -> Self {
        debug_assert_eq!(weights.len(), penalized_mask.len());
        Self {
            intercept,
            weights,
            penalized_mask,
        }
    }

    pub fn zeros(m: usize) -> Self {
        Self::new(0.0, vec![0.0; m], vec![true; m])
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }
}

/// Solver outcome summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Number of coordinate-descent sweeps performed.
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    pub max_kkt_violation: f64,
}
