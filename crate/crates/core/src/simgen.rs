//! Synthetic grouped-regression scenarios.
//!
//! Each group draws its feature matrix i.i.d. standard normal (zero
//! cross-covariance) and its outcome as `y = X b_k + eps` with Gaussian
//! noise; groups are related only through shared coefficient values. The
//! base case is one large and one small group sharing most of their
//! informative coefficients, and eight sweep axes vary one parameter at a
//! time around it.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupRole {
    Large,
    Small,
}

/// One simulated group: label, sample count, noise level, and its true
/// coefficient vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub size: usize,
    pub noise_sd: f64,
    pub coefficients: Vec<f64>,
    pub role: GroupRole,
}

/// A fully specified simulation scenario, replicable from a seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub name: String,
    pub num_covariates: usize,
    pub groups: Vec<GroupSpec>,
    pub test_size_per_group: usize,
    pub seed: u64,
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidArgument("scenario has no groups".into()));
        }
        for g in &self.groups {
            if g.size == 0 {
                return Err(Error::InvalidArgument(format!(
                    "group `{}` has size 0",
                    g.label
                )));
            }
            if !(g.noise_sd >= 0.0) || !g.noise_sd.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "group `{}` has invalid noise sd",
                    g.label
                )));
            }
            if g.coefficients.len() != self.num_covariates {
                return Err(Error::InvalidArgument(format!(
                    "group `{}` has {} coefficients for {} covariates",
                    g.label,
                    g.coefficients.len(),
                    self.num_covariates
                )));
            }
        }
        if self.test_size_per_group == 0 {
            return Err(Error::InvalidArgument("test size must be >= 1".into()));
        }
        Ok(())
    }

    /// Labels of the groups designated small (the tuning objective).
    pub fn small_group_labels(&self) -> Vec<String> {
        self.groups
            .iter()
            .filter(|g| g.role == GroupRole::Small)
            .map(|g| g.label.clone())
            .collect()
    }
}

/// Knobs behind every scenario; the base case fixes all of them and sweeps
/// vary exactly one.
#[derive(Debug, Clone, Copy)]
struct ScenarioParams {
    num_covariates: usize,
    num_uninformative: usize,
    default_coef: f64,
    num_unshared: usize,
    unshared_value: f64,
    num_large_groups: usize,
    num_small_groups: usize,
    large_size: usize,
    small_size: usize,
    large_noise: f64,
    small_noise: f64,
    test_per_group: usize,
}

const BASE_PARAMS: ScenarioParams = ScenarioParams {
    num_covariates: 30,
    num_uninformative: 20,
    default_coef: 1.0,
    num_unshared: 3,
    unshared_value: 3.0,
    num_large_groups: 1,
    num_small_groups: 1,
    large_size: 300,
    small_size: 100,
    large_noise: 1.0,
    small_noise: 1.0,
    test_per_group: 1000,
};

fn build_scenario(name: &str, p: ScenarioParams) -> SimulationScenario {
    let m = p.num_covariates;
    let informative = m - p.num_uninformative;
    let mut large_beta = vec![0.0; m];
    for b in large_beta.iter_mut().take(informative) {
        *b = p.default_coef;
    }
    // unshared coefficients occupy the last positions of the informative
    // block, deterministically
    let unshared = p.num_unshared.min(informative);
    let mut small_beta = large_beta.clone();
    for j in (informative - unshared)..informative {
        small_beta[j] = p.unshared_value;
    }

    let mut groups = Vec::new();
    for i in 0..p.num_large_groups {
        let label = if i == 0 {
            "large".to_string()
        } else {
            format!("large{}", i + 1)
        };
        groups.push(GroupSpec {
            label,
            size: p.large_size,
            noise_sd: p.large_noise,
            coefficients: large_beta.clone(),
            role: GroupRole::Large,
        });
    }
    for i in 0..p.num_small_groups {
        let label = if i == 0 {
            "small".to_string()
        } else {
            format!("small{}", i + 1)
        };
        groups.push(GroupSpec {
            label,
            size: p.small_size,
            noise_sd: p.small_noise,
            coefficients: small_beta.clone(),
            role: GroupRole::Small,
        });
    }

    SimulationScenario {
        name: name.to_string(),
        num_covariates: m,
        groups,
        test_size_per_group: p.test_per_group,
        seed: 0,
    }
}

/// The reference scenario: 300/100 samples, 30 covariates of which 20 are
/// uninformative, small group differing in three coefficients (value 3 at
/// positions 7..9), unit noise, 1000 test samples per group.
pub fn base_case() -> SimulationScenario {
    build_scenario("base", BASE_PARAMS)
}

fn draw_group(
    rng: &mut ChaCha8Rng,
    size: usize,
    spec: &GroupSpec,
    m: usize,
) -> (Array2<f64>, Array1<f64>) {
    let mut x = Array2::zeros((size, m));
    for i in 0..size {
        for j in 0..m {
            x[[i, j]] = StandardNormal.sample(rng);
        }
    }
    let beta = Array1::from(spec.coefficients.clone());
    let mut y = x.dot(&beta);
    for v in y.iter_mut() {
        let eps: f64 = StandardNormal.sample(rng);
        *v += spec.noise_sd * eps;
    }
    (x, y)
}

/// Draws one train/test pair. Deterministic given `seed`: the same seed
/// yields bit-identical datasets.
pub fn generate(scenario: &SimulationScenario, seed: u64) -> (GroupedDataset, GroupedDataset) {
    scenario.validate().expect("invalid scenario");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = scenario.num_covariates;

    let assemble = |sizes: &dyn Fn(&GroupSpec) -> usize, rng: &mut ChaCha8Rng| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut labels = Vec::new();
        for g in &scenario.groups {
            let size = sizes(g);
            let (x, y) = draw_group(rng, size, g, m);
            xs.push(x);
            ys.push(y);
            labels.extend(std::iter::repeat(g.label.clone()).take(size));
        }
        let total: usize = xs.iter().map(|x| x.nrows()).sum();
        let mut features = Array2::zeros((total, m));
        let mut outcome = Array1::zeros(total);
        let mut row = 0;
        for (x, y) in xs.iter().zip(ys.iter()) {
            for i in 0..x.nrows() {
                for j in 0..m {
                    features[[row, j]] = x[[i, j]];
                }
                outcome[row] = y[i];
                row += 1;
            }
        }
        GroupedDataset::new(features, outcome, &labels).expect("generated data is valid")
    };

    let train = assemble(&|g: &GroupSpec| g.size, &mut rng);
    let test = assemble(&|_: &GroupSpec| scenario.test_size_per_group, &mut rng);
    (train, test)
}

/// The eight sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    SmallGroupSize,
    LargeGroupSize,
    SmallGroupNoise,
    UnsharedValue,
    NumUnshared,
    NumUninformative,
    NumLargeGroups,
    NumSmallGroups,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 8] = [
        SweepAxis::SmallGroupSize,
        SweepAxis::LargeGroupSize,
        SweepAxis::SmallGroupNoise,
        SweepAxis::UnsharedValue,
        SweepAxis::NumUnshared,
        SweepAxis::NumUninformative,
        SweepAxis::NumLargeGroups,
        SweepAxis::NumSmallGroups,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SmallGroupSize => "small-group-size",
            SweepAxis::LargeGroupSize => "large-group-size",
            SweepAxis::SmallGroupNoise => "small-group-noise",
            SweepAxis::UnsharedValue => "unshared-value",
            SweepAxis::NumUnshared => "num-unshared",
            SweepAxis::NumUninformative => "num-uninformative",
            SweepAxis::NumLargeGroups => "num-large-groups",
            SweepAxis::NumSmallGroups => "num-small-groups",
        }
    }

    /// Default tick values spanning the relevant extremities around the base
    /// case.
    pub fn default_values(&self) -> Vec<f64> {
        match self {
            SweepAxis::SmallGroupSize => vec![25.0, 50.0, 100.0, 200.0, 400.0],
            SweepAxis::LargeGroupSize => vec![100.0, 300.0, 1000.0, 3000.0],
            SweepAxis::SmallGroupNoise => vec![0.25, 0.5, 1.0, 2.0, 4.0],
            SweepAxis::UnsharedValue => vec![1.0, 2.0, 3.0, 5.0, 8.0],
            SweepAxis::NumUnshared => vec![0.0, 2.0, 3.0, 5.0, 10.0],
            SweepAxis::NumUninformative => vec![0.0, 10.0, 20.0, 28.0],
            SweepAxis::NumLargeGroups => vec![1.0, 2.0, 3.0, 5.0],
            SweepAxis::NumSmallGroups => vec![1.0, 2.0, 3.0, 5.0],
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown sweep axis `{s}`; expected one of {:?}",
                    SweepAxis::ALL.map(|a| a.name())
                ))
            })
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A base scenario with one varied parameter.
#[derive(Debug, Clone)]
pub struct ScenarioSweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub scenarios: Vec<SimulationScenario>,
}

fn require_count(axis: SweepAxis, v: f64, min: usize, max: Option<usize>) -> Result<usize> {
    if !v.is_finite() || v.fract() != 0.0 || v < min as f64 {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} needs an integer value >= {min}, got {v}"
        )));
    }
    let c = v as usize;
    if let Some(max) = max {
        if c > max {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} value {c} exceeds maximum {max}"
            )));
        }
    }
    Ok(c)
}

/// One scenario per value, each differing from the base case only on `axis`.
pub fn sweep_scenarios(axis: SweepAxis, values: &[f64]) -> Result<Vec<SimulationScenario>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let mut p = BASE_PARAMS;
        match axis {
            SweepAxis::SmallGroupSize => p.small_size = require_count(axis, v, 1, None)?,
            SweepAxis::LargeGroupSize => p.large_size = require_count(axis, v, 1, None)?,
            SweepAxis::SmallGroupNoise => {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "noise sd must be nonnegative, got {v}"
                    )));
                }
                p.small_noise = v;
            }
            SweepAxis::UnsharedValue => {
                if !v.is_finite() {
                    return Err(Error::InvalidArgument("unshared value must be finite".into()));
                }
                p.unshared_value = v;
            }
            SweepAxis::NumUnshared => {
                p.num_unshared = require_count(axis, v, 0, Some(p.num_covariates))?
            }
            SweepAxis::NumUninformative => {
                p.num_uninformative = require_count(axis, v, 0, Some(p.num_covariates))?
            }
            SweepAxis::NumLargeGroups => p.num_large_groups = require_count(axis, v, 1, None)?,
            SweepAxis::NumSmallGroups => p.num_small_groups = require_count(axis, v, 1, None)?,
        }
        let name = format!("{axis}={v}");
        out.push(build_scenario(&name, p));
    }
    Ok(out)
}

pub fn sweep(axis: SweepAxis, values: Option<Vec<f64>>) -> Result<ScenarioSweep> {
    let values = values.unwrap_or_else(|| axis.default_values());
    let scenarios = sweep_scenarios(axis, &values)?;
    Ok(ScenarioSweep {
        axis,
        values,
        scenarios,
    })
}

/// Stable per-replication seed stream: mixes the root seed, a scope string
/// (scenario or experiment id), and the replication counter, so replication
/// `r` of scenario `s` is reproducible in isolation.
pub fn derive_seed(root: u64, scope: &str, replication: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scope.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root
        ^ h.rotate_left(17)
        ^ replication.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_case_matches_reference_parameters() {
        let s = base_case();
        assert_eq!(s.num_covariates, 30);
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.groups[0].size, 300);
        assert_eq!(s.groups[1].size, 100);
        assert_eq!(s.test_size_per_group, 1000);
        for g in &s.groups {
            assert_eq!(g.noise_sd, 1.0);
            assert_eq!(g.coefficients.iter().filter(|&&b| b == 0.0).count(), 20);
        }
        let small = &s.groups[1].coefficients;
        assert_eq!(small.iter().filter(|&&b| b == 1.0).count(), 7);
        assert_eq!(small.iter().filter(|&&b| b == 3.0).count(), 3);
        assert_eq!(&small[7..10], &[3.0, 3.0, 3.0]);
        let large = &s.groups[0].coefficients;
        assert_eq!(large.iter().filter(|&&b| b == 1.0).count(), 10);
    }

    #[test]
    fn zero_noise_is_exact_linear_model() {
        let mut s = base_case();
        for g in &mut s.groups {
            g.noise_sd = 0.0;
            g.size = 20;
        }
        s.test_size_per_group = 5;
        let (train, _) = generate(&s, 3);
        for (k, g) in s.groups.iter().enumerate() {
            let beta = Array1::from(g.coefficients.clone());
            for &row in train.group_rows(k) {
                let pred: f64 = train.features().row(row).dot(&beta);
                assert_eq!(pred, train.outcome()[row]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = base_case();
        let (a_train, a_test) = generate(&s, 42);
        let (b_train, b_test) = generate(&s, 42);
        assert_eq!(a_train.features(), b_train.features());
        assert_eq!(a_train.outcome(), b_train.outcome());
        assert_eq!(a_test.features(), b_test.features());
        assert_eq!(a_test.outcome(), b_test.outcome());
        let (c_train, _) = generate(&s, 43);
        assert_ne!(a_train.outcome(), c_train.outcome());
    }

    #[test]
    fn group_sizes_match_scenario() {
        let s = sweep_scenarios(SweepAxis::NumSmallGroups, &[3.0]).unwrap().remove(0);
        let (train, test) = generate(&s, 1);
        assert_eq!(train.group_sizes(), &[300, 100, 100, 100]);
        assert_eq!(test.group_sizes(), &[1000, 1000, 1000, 1000]);
        assert_eq!(
            train.group_ids(),
            &["large", "small", "small2", "small3"]
        );
    }

    #[test]
    fn features_standard_normal_at_scale() {
        let mut s = base_case();
        s.groups.truncate(1);
        s.groups[0].size = 10_000;
        let (train, _) = generate(&s, 9);
        for j in 0..5 {
            let col = train.features().column(j).to_owned();
            let mean = col.mean().unwrap();
            let sd = (col.mapv(|v| (v - mean) * (v - mean)).sum() / (col.len() as f64 - 1.0))
                .sqrt();
            assert!(mean.abs() < 0.05, "column {j} mean {mean}");
            assert!((sd - 1.0).abs() < 0.05, "column {j} sd {sd}");
        }
    }

    #[test]
    fn outcome_variance_matches_theory() {
        // Var(y) = ||beta||^2 + sigma^2 for standard normal features
        let mut s = base_case();
        s.groups[0].size = 10_000;
        s.groups[1].size = 10_000;
        let (train, _) = generate(&s, 11);
        for (k, g) in s.groups.iter().enumerate() {
            let beta = Array1::from(g.coefficients.clone());
            let expected = beta.dot(&beta) + g.noise_sd * g.noise_sd;
            let ys: Vec<f64> = train.group_rows(k).iter().map(|&r| train.outcome()[r]).collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>()
                / (ys.len() as f64 - 1.0);
            assert!(
                (var - expected).abs() < 0.1 * expected,
                "group {k}: empirical {var} vs expected {expected}"
            );
        }
    }

    #[test]
    fn sweeps_vary_only_the_axis() {
        let scenarios =
            sweep_scenarios(SweepAxis::SmallGroupSize, &[50.0, 100.0, 200.0]).unwrap();
        assert_eq!(scenarios.len(), 3);
        let base = base_case();
        for (s, expect) in scenarios.iter().zip([50, 100, 200]) {
            assert_eq!(s.groups[1].size, expect);
            assert_eq!(s.groups[0].size, base.groups[0].size);
            assert_eq!(s.groups[1].coefficients, base.groups[1].coefficients);
        }
    }

    #[test]
    fn unshared_value_one_makes_groups_identical() {
        let s = sweep_scenarios(SweepAxis::UnsharedValue, &[1.0]).unwrap().remove(0);
        assert_eq!(s.groups[0].coefficients, s.groups[1].coefficients);
        let s = sweep_scenarios(SweepAxis::NumUnshared, &[0.0]).unwrap().remove(0);
        assert_eq!(s.groups[0].coefficients, s.groups[1].coefficients);
    }

    #[test]
    fn uninformative_cap_shrinks_unshared_block() {
        let s = sweep_scenarios(SweepAxis::NumUninformative, &[28.0]).unwrap().remove(0);
        // informative block of 2 < 3 unshared: both informative slots differ
        assert_eq!(&s.groups[0].coefficients[..2], &[1.0, 1.0]);
        assert_eq!(&s.groups[1].coefficients[..2], &[3.0, 3.0]);
        assert!(s.groups[1].coefficients[2..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn unknown_axis_and_bad_values_error() {
        assert!("no-such-axis".parse::<SweepAxis>().is_err());
        assert!(sweep_scenarios(SweepAxis::SmallGroupSize, &[2.5]).is_err());
        assert!(sweep_scenarios(SweepAxis::SmallGroupNoise, &[-1.0]).is_err());
        assert!(sweep_scenarios(SweepAxis::NumUnshared, &[31.0]).is_err());
    }

    #[test]
    fn derive_seed_is_stable_and_scoped() {
        let a = derive_seed(1, "base", 0);
        assert_eq!(a, derive_seed(1, "base", 0));
        assert_ne!(a, derive_seed(1, "base", 1));
        assert_ne!(a, derive_seed(2, "base", 0));
        assert_ne!(a, derive_seed(1, "other", 0));
    }
}
