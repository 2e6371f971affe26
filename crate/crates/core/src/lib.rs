//! Grouped-penalty linear regression.
//!
//! The centerpiece is a weighted interaction lasso for imbalanced groups:
//! one shared base coefficient vector plus a penalized interaction block per
//! non-base group, with `1/n_k` sample weights and a separate sparsity
//! penalty per group. Alongside it live the joint lasso (per-group
//! coefficients tied by a pairwise L2 fusion penalty) and two baselines
//! (independent per-group lassos, and a pooled lasso with group indicator
//! dummies), all sitting on a single coordinate-descent solver with
//! observation weights and per-coefficient penalty factors.
//!
//! Supporting modules: synthetic scenario generation ([`simgen`]),
//! cross-validated grid-search tuning targeting small-group MSE ([`tune`]),
//! and the evaluation metric ([`metrics`]).

pub mod data;
pub mod design;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod models;
pub mod reference;
pub mod simgen;
pub mod solver;
pub mod tune;

pub use data::{CoefficientBlock, FitDiagnostics, GroupedDataset};
pub use error::{Error, Result};
