//! Expanded design matrices, penalty-factor layouts, and sample weights for
//! the interaction estimator and the group-indicator baseline, plus the
//! mapping from flat solver coefficients back to per-group blocks.
//!
//! Covariates are centered and scaled to unit weighted standard deviation on
//! the full training set (not per group) before expansion; interaction
//! columns inherit the scaled values, and fitted coefficients are mapped
//! back to the original scale through [`Scaling`].

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientBlock, GroupedDataset};
use crate::error::{Error, Result};

/// Per-covariate centers and scales used before design expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Scaling {
    pub fn identity(m: usize) -> Self {
        Self {
            centers: vec![0.0; m],
            scales: vec![1.0; m],
        }
    }

    /// Weighted center and unit-variance scale per column. Constant columns
    /// keep scale 1 so they center to zero rather than dividing by zero.
    pub fn weighted(features: ArrayView2<'_, f64>, weights: ArrayView1<'_, f64>) -> Self {
        let m = features.ncols();
        let wsum: f64 = weights.sum();
        let mut centers = Vec::with_capacity(m);
        let mut scales = Vec::with_capacity(m);
        for j in 0..m {
            let col = features.column(j);
            let mut swx = 0.0;
            let mut msq = 0.0;
            for (x, w) in col.iter().zip(weights.iter()) {
                swx += w * x;
                msq += w * x * x;
            }
            let center = swx / wsum;
            let mut var = 0.0;
            for (x, w) in col.iter().zip(weights.iter()) {
                let d = x - center;
                var += w * d * d;
            }
            var /= wsum;
            let scale = if var <= 1e-20 * (msq / wsum).max(f64::MIN_POSITIVE) {
                1.0
            } else {
                var.sqrt()
            };
            centers.push(center);
            scales.push(scale);
        }
        Self { centers, scales }
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let c = self.centers[j];
            let s = self.scales[j];
            col.mapv_inplace(|x| (x - c) / s);
        }
        out
    }

    /// Maps a coefficient block fitted on the standardized scale back to the
    /// original covariate scale.
    pub fn unscale_block(&self, block: &CoefficientBlock) -> CoefficientBlock {
        let mut intercept = block.intercept;
        let weights: Vec<f64> = block
            .weights
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                intercept -= b * self.centers[j] / self.scales[j];
                b / self.scales[j]
            })
            .collect();
        CoefficientBlock::new(intercept, weights, block.penalized_mask.clone())
    }

    pub fn m(&self) -> usize {
        self.centers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    BaseIntercept,
    Base,
    GroupIntercept,
    Interaction,
}

/// Semantic identity of one expanded-design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub group: String,
    pub covariate: Option<String>,
    pub role: ColumnRole,
}

/// Interaction design: `[base intercept | m base covariates | per non-base
/// group: intercept offset, m interaction columns]`, with `1/n_k` sample
/// weights. `penalty_factor` holds the unit layout (0 for the base
/// intercept, 1 elsewhere); [`assemble_penalty_factors`] turns per-group
/// lambdas into the solver's factor vector.
#[derive(Debug, Clone)]
pub struct FairDesign {
    pub expanded: Array2<f64>,
    pub column_map: Vec<ColumnInfo>,
    pub penalty_factor: Array1<f64>,
    pub sample_weight: Array1<f64>,
    pub base_group: String,
    pub scaling: Scaling,
    groups: Vec<String>,
    feature_names: Vec<String>,
}

impl FairDesign {
    pub fn num_columns(&self) -> usize {
        self.expanded.ncols()
    }

    /// Group ids in dataset order.
    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    /// Non-base groups in dataset order (the block order of the design).
    pub fn non_base_groups(&self) -> impl Iterator<Item = &String> {
        self.groups.iter().filter(move |g| **g != self.base_group)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn m(&self) -> usize {
        self.feature_names.len()
    }
}

/// Raw interaction expansion of already-scaled covariates. Row layout for a
/// sample in group `g` with covariates `x`:
/// base block `[1, x...]`, then per non-base group: `[1, x...]` if `g` is
/// that group, zeros otherwise.
fn expand_interaction_rows(
    std_features: ArrayView2<'_, f64>,
    group_index: &[usize],
    non_base: &[usize],
) -> Array2<f64> {
    let n = std_features.nrows();
    let m = std_features.ncols();
    let p = 1 + m + non_base.len() * (1 + m);
    let mut out = Array2::zeros((n, p));
    for i in 0..n {
        out[[i, 0]] = 1.0;
        for j in 0..m {
            out[[i, 1 + j]] = std_features[[i, j]];
        }
        if let Some(slot) = non_base.iter().position(|&g| g == group_index[i]) {
            let offset = 1 + m + slot * (1 + m);
            out[[i, offset]] = 1.0;
            for j in 0..m {
                out[[i, offset + 1 + j]] = std_features[[i, j]];
            }
        }
    }
    out
}

/// Builds the interaction design. `base_group = None` picks the largest
/// group (ties broken by dataset group order).
pub fn build_fair_design(data: &GroupedDataset, base_group: Option<&str>) -> Result<FairDesign> {
    let base_idx = match base_group {
        Some(id) => data
            .group_position(id)
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))?,
        None => {
            let sizes = data.group_sizes();
            let mut best = 0;
            for k in 1..sizes.len() {
                if sizes[k] > sizes[best] {
                    best = k;
                }
            }
            best
        }
    };
    let base_id = data.group_ids()[base_idx].clone();

    let sample_weight: Array1<f64> = data
        .group_index()
        .iter()
        .map(|&k| 1.0 / data.group_sizes()[k] as f64)
        .collect();
    let scaling = Scaling::weighted(data.features(), sample_weight.view());
    let std_features = scaling.apply(data.features());

    let non_base: Vec<usize> = (0..data.num_groups()).filter(|&k| k != base_idx).collect();
    let expanded = expand_interaction_rows(std_features.view(), data.group_index(), &non_base);

    let mut column_map = Vec::with_capacity(expanded.ncols());
    column_map.push(ColumnInfo {
        group: base_id.clone(),
        covariate: None,
        role: ColumnRole::BaseIntercept,
    });
    for name in data.feature_names() {
        column_map.push(ColumnInfo {
            group: base_id.clone(),
            covariate: Some(name.clone()),
            role: ColumnRole::Base,
        });
    }
    for &k in &non_base {
        let gid = data.group_ids()[k].clone();
        column_map.push(ColumnInfo {
            group: gid.clone(),
            covariate: None,
            role: ColumnRole::GroupIntercept,
        });
        for name in data.feature_names() {
            column_map.push(ColumnInfo {
                group: gid.clone(),
                covariate: Some(name.clone()),
                role: ColumnRole::Interaction,
            });
        }
    }

    let mut penalty_factor = Array1::ones(expanded.ncols());
    penalty_factor[0] = 0.0;

    Ok(FairDesign {
        expanded,
        column_map,
        penalty_factor,
        sample_weight,
        base_group: base_id,
        scaling,
        groups: data.group_ids().to_vec(),
        feature_names: data.feature_names().to_vec(),
    })
}

/// Pooled design with group membership dummies: `[intercept | m covariates |
/// K-1 one-hot dummies]`, unweighted, dummies penalized like covariates. The
/// first group in dataset order is the dummy reference level.
#[derive(Debug, Clone)]
pub struct IndicatorDesign {
    pub expanded: Array2<f64>,
    pub penalty_factor: Array1<f64>,
    pub sample_weight: Array1<f64>,
    pub scaling: Scaling,
    pub reference_group: String,
    dummy_groups: Vec<String>,
    feature_names: Vec<String>,
}

impl IndicatorDesign {
    pub fn dummy_groups(&self) -> &[String] {
        &self.dummy_groups
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn m(&self) -> usize {
        self.feature_names.len()
    }
}

pub fn build_indicator_design(data: &GroupedDataset) -> IndicatorDesign {
    let n = data.n();
    let m = data.m();
    let k = data.num_groups();
    let sample_weight = Array1::ones(n);
    let scaling = Scaling::weighted(data.features(), sample_weight.view());
    let std_features = scaling.apply(data.features());

    let p = 1 + m + (k - 1);
    let mut expanded = Array2::zeros((n, p));
    for i in 0..n {
        expanded[[i, 0]] = 1.0;
        for j in 0..m {
            expanded[[i, 1 + j]] = std_features[[i, j]];
        }
        let g = data.group_index()[i];
        if g > 0 {
            expanded[[i, m + g]] = 1.0;
        }
    }
    let mut penalty_factor = Array1::ones(p);
    penalty_factor[0] = 0.0;

    IndicatorDesign {
        expanded,
        penalty_factor,
        sample_weight,
        scaling,
        reference_group: data.group_ids()[0].clone(),
        dummy_groups: data.group_ids()[1..].to_vec(),
        feature_names: data.feature_names().to_vec(),
    }
}

/// Turns per-group penalties into the solver inputs: global lambda 1 and a
/// factor vector carrying each column's group lambda (base intercept 0), so
/// the solved objective applies exactly `lambda_k` to block `k`.
pub fn assemble_penalty_factors(
    design: &FairDesign,
    lambda_per_group: &BTreeMap<String, f64>,
) -> Result<(f64, Array1<f64>)> {
    for gid in design.groups() {
        match lambda_per_group.get(gid) {
            None => {
                return Err(Error::InvalidArgument(format!(
                    "no lambda given for group `{gid}`"
                )))
            }
            Some(&l) if !(l >= 0.0) || !l.is_finite() => {
                return Err(Error::InvalidArgument(format!(
                    "lambda for group `{gid}` must be nonnegative and finite"
                )))
            }
            _ => {}
        }
    }
    let factors: Array1<f64> = design
        .column_map
        .iter()
        .map(|info| match info.role {
            ColumnRole::BaseIntercept => 0.0,
            _ => lambda_per_group[&info.group],
        })
        .collect();
    Ok((1.0, factors))
}

/// Base block plus per-group interaction blocks (dataset group order).
#[derive(Debug, Clone, PartialEq)]
pub struct FairBlocks {
    pub base: CoefficientBlock,
    pub groups: Vec<(String, CoefficientBlock)>,
}

/// Splits a flat solver coefficient vector into semantic blocks.
pub fn split_coefficients(design: &FairDesign, flat: ArrayView1<'_, f64>) -> Result<FairBlocks> {
    let m = design.m();
    let p = design.num_columns();
    if flat.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients for {p} design columns",
            flat.len()
        )));
    }
    let base = CoefficientBlock::new(
        flat[0],
        flat.iter().skip(1).take(m).copied().collect(),
        vec![true; m],
    );
    let mut groups = Vec::new();
    for (slot, gid) in design.non_base_groups().enumerate() {
        let offset = 1 + m + slot * (1 + m);
        let block = CoefficientBlock::new(
            flat[offset],
            flat.iter().skip(offset + 1).take(m).copied().collect(),
            vec![true; m],
        );
        groups.push((gid.clone(), block));
    }
    Ok(FairBlocks { base, groups })
}

/// Inverse of [`split_coefficients`].
pub fn flatten_coefficients(design: &FairDesign, blocks: &FairBlocks) -> Array1<f64> {
    let mut flat = Vec::with_capacity(design.num_columns());
    flat.push(blocks.base.intercept);
    flat.extend_from_slice(&blocks.base.weights);
    for (_, block) in &blocks.groups {
        flat.push(block.intercept);
        flat.extend_from_slice(&block.weights);
    }
    Array1::from(flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn two_group_data() -> GroupedDataset {
        let x = array![
            [1.0, 5.0],
            [2.0, 4.0],
            [3.0, 3.0],
            [4.0, 2.0],
            [5.0, 1.0],
            [6.0, 0.0]
        ];
        let y = array![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        GroupedDataset::new(x, y, &labels(&["g1", "g1", "g1", "g1", "g2", "g2"])).unwrap()
    }

    #[test]
    fn raw_expansion_pattern() {
        // m=2, K=2, base g1: g2 sample row is [1, a, b, 1, a, b]
        let std = array![[7.0, -2.0], [0.5, 1.5]];
        let rows = expand_interaction_rows(std.view(), &[0, 1], &[1]);
        assert_eq!(
            rows.row(1).to_vec(),
            vec![1.0, 0.5, 1.5, 1.0, 0.5, 1.5]
        );
        assert_eq!(
            rows.row(0).to_vec(),
            vec![1.0, 7.0, -2.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn fair_design_dimensions_and_weights() {
        let data = two_group_data();
        let design = build_fair_design(&data, None).unwrap();
        assert_eq!(design.base_group, "g1"); // largest group
        assert_eq!(design.num_columns(), 1 + 2 + (1 + 2));
        for (i, &k) in data.group_index().iter().enumerate() {
            let expect = 1.0 / data.group_sizes()[k] as f64;
            assert_eq!(design.sample_weight[i], expect);
        }
        // column counts by role
        let count = |r: ColumnRole| design.column_map.iter().filter(|c| c.role == r).count();
        assert_eq!(count(ColumnRole::BaseIntercept), 1);
        assert_eq!(count(ColumnRole::Base), 2);
        assert_eq!(count(ColumnRole::GroupIntercept), 1);
        assert_eq!(count(ColumnRole::Interaction), 2);
        assert_eq!(design.penalty_factor[0], 0.0);
        assert!(design.penalty_factor.iter().skip(1).all(|&f| f == 1.0));
    }

    #[test]
    fn fair_rows_follow_standardized_pattern() {
        let data = two_group_data();
        let design = build_fair_design(&data, None).unwrap();
        let std = design.scaling.apply(data.features());
        // g2 sample (row 4): [1, s0, s1, 1, s0, s1]
        let row = design.expanded.row(4);
        assert_eq!(row[0], 1.0);
        assert_eq!(row[1], std[[4, 0]]);
        assert_eq!(row[2], std[[4, 1]]);
        assert_eq!(row[3], 1.0);
        assert_eq!(row[4], std[[4, 0]]);
        assert_eq!(row[5], std[[4, 1]]);
        // base sample (row 0): zeros in the g2 block
        let row = design.expanded.row(0);
        assert_eq!(row[3], 0.0);
        assert_eq!(row[4], 0.0);
        assert_eq!(row[5], 0.0);
    }

    #[test]
    fn unknown_base_group_rejected() {
        let data = two_group_data();
        assert!(matches!(
            build_fair_design(&data, Some("nope")),
            Err(Error::UnknownGroup(_))
        ));
    }

    #[test]
    fn base_case_dimensions() {
        // m=30, K=2 with sizes 300/100: P = 1 + 30 + 31 = 62
        let scenario = crate::simgen::base_case();
        let (train, _) = crate::simgen::generate(&scenario, 7);
        let design = build_fair_design(&train, None).unwrap();
        assert_eq!(design.num_columns(), 62);
        let w: std::collections::BTreeSet<u64> = design
            .sample_weight
            .iter()
            .map(|w| w.to_bits())
            .collect();
        assert_eq!(w.len(), 2);
        assert!(w.contains(&(1.0f64 / 300.0).to_bits()));
        assert!(w.contains(&(1.0f64 / 100.0).to_bits()));
    }

    #[test]
    fn indicator_design_shapes() {
        let data = two_group_data();
        let design = build_indicator_design(&data);
        assert_eq!(design.expanded.ncols(), 1 + 2 + 1);
        assert!(design.sample_weight.iter().all(|&w| w == 1.0));
        assert_eq!(design.reference_group, "g1");
        // one-hot dummy for the g2 sample
        assert_eq!(design.expanded[[4, 3]], 1.0);
        assert_eq!(design.expanded[[0, 3]], 0.0);
    }

    #[test]
    fn indicator_single_group_has_no_dummies() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = array![1.0, 2.0, 3.0];
        let data = GroupedDataset::new(x, y, &labels(&["only", "only", "only"])).unwrap();
        let design = build_indicator_design(&data);
        assert_eq!(design.expanded.ncols(), 2);
        assert!(design.dummy_groups().is_empty());
    }

    #[test]
    fn indicator_three_groups() {
        let x = array![[1.0, 0.0], [2.0, 1.0], [3.0, 2.0], [4.0, 3.0], [5.0, 4.0], [6.0, 5.0]];
        let y = array![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let data =
            GroupedDataset::new(x, y, &labels(&["a", "a", "b", "b", "c", "c"])).unwrap();
        let design = build_indicator_design(&data);
        // intercept + 2 covariates + 2 dummies
        assert_eq!(design.expanded.ncols(), 5);
        // sample in b: dummy(b)=1, dummy(c)=0
        assert_eq!(design.expanded[[2, 3]], 1.0);
        assert_eq!(design.expanded[[2, 4]], 0.0);
    }

    #[test]
    fn penalty_factors_follow_group_lambdas() {
        let data = two_group_data();
        let design = build_fair_design(&data, None).unwrap();
        let mut lambdas = BTreeMap::new();
        lambdas.insert("g1".to_string(), 2.0);
        lambdas.insert("g2".to_string(), 5.0);
        let (lambda, factors) = assemble_penalty_factors(&design, &lambdas).unwrap();
        assert_eq!(lambda, 1.0);
        assert_eq!(factors.to_vec(), vec![0.0, 2.0, 2.0, 5.0, 5.0, 5.0]);

        lambdas.remove("g2");
        assert!(assemble_penalty_factors(&design, &lambdas).is_err());
    }

    #[test]
    fn split_and_flatten_round_trip() {
        let data = two_group_data();
        let design = build_fair_design(&data, None).unwrap();
        let flat = array![0.5, 1.0, -2.0, 0.25, 3.0, -1.5];
        let blocks = split_coefficients(&design, flat.view()).unwrap();
        assert_eq!(blocks.base.intercept, 0.5);
        assert_eq!(blocks.base.weights, vec![1.0, -2.0]);
        assert_eq!(blocks.groups[0].0, "g2");
        assert_eq!(blocks.groups[0].1.intercept, 0.25);
        assert_eq!(blocks.groups[0].1.weights, vec![3.0, -1.5]);
        let back = flatten_coefficients(&design, &blocks);
        assert_eq!(back, flat);

        let all_zero = split_coefficients(&design, Array1::zeros(6).view()).unwrap();
        assert_eq!(all_zero.base.intercept, 0.0);
        assert!(all_zero.groups[0].1.weights.iter().all(|&w| w == 0.0));

        assert!(split_coefficients(&design, Array1::zeros(5).view()).is_err());
    }

    #[test]
    fn prediction_equivalence_matrix_vs_blocks() {
        let data = two_group_data();
        let design = build_fair_design(&data, None).unwrap();
        let flat = array![0.1, -0.7, 0.9, 1.3, 0.4, -0.2];
        let blocks = split_coefficients(&design, flat.view()).unwrap();
        let std = design.scaling.apply(data.features());
        let by_matrix = design.expanded.dot(&flat);
        for i in 0..data.n() {
            let mut pred = blocks.base.intercept;
            for j in 0..data.m() {
                pred += blocks.base.weights[j] * std[[i, j]];
            }
            if data.group_label(i) != design.base_group {
                let block = &blocks.groups[0].1;
                pred += block.intercept;
                for j in 0..data.m() {
                    pred += block.weights[j] * std[[i, j]];
                }
            }
            assert_abs_diff_eq!(pred, by_matrix[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn base_rows_insensitive_to_group_blocks() {
        let data = two_group_data();
        let design = build_fair_design(&data, None).unwrap();
        let with = array![0.1, -0.7, 0.9, 1.3, 0.4, -0.2];
        let without = array![0.1, -0.7, 0.9, 0.0, 0.0, 0.0];
        let pw = design.expanded.dot(&with);
        let po = design.expanded.dot(&without);
        for i in 0..data.n() {
            if data.group_label(i) == design.base_group {
                assert_eq!(pw[i], po[i]);
            }
        }
    }

    #[test]
    fn unscale_block_round_trips_predictions() {
        let data = two_group_data();
        let design = build_fair_design(&data, None).unwrap();
        let std = design.scaling.apply(data.features());
        let block = CoefficientBlock::new(0.8, vec![1.5, -0.3], vec![true, true]);
        let orig = design.scaling.unscale_block(&block);
        for i in 0..data.n() {
            let on_std =
                block.intercept + block.weights[0] * std[[i, 0]] + block.weights[1] * std[[i, 1]];
            let on_orig = orig.intercept
                + orig.weights[0] * data.features()[[i, 0]]
                + orig.weights[1] * data.features()[[i, 1]];
            assert_abs_diff_eq!(on_std, on_orig, epsilon = 1e-12);
        }
    }

    proptest! {
        // P = 1 + m + (K-1)(1+m) for any K >= 1, m >= 0
        #[test]
        fn column_count_formula(k in 1usize..5, m in 0usize..6) {
            let n_per = 2;
            let n = k * n_per;
            let x = Array2::from_shape_fn((n, m), |(i, j)| (i * 7 + j * 3) as f64 % 5.0);
            let y = Array1::from_shape_fn(n, |i| i as f64);
            let labels: Vec<String> = (0..n).map(|i| format!("g{}", i / n_per)).collect();
            let data = GroupedDataset::new(x, y, &labels).unwrap();
            let design = build_fair_design(&data, None).unwrap();
            prop_assert_eq!(design.num_columns(), 1 + m + (k - 1) * (1 + m));
        }
    }
}
