use thiserror::Error;

/// Errors produced while building datasets, designs, or fitting models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("group `{group}` has {size} samples, needs at least {needed}")]
    GroupTooSmall {
        group: String,
        size: usize,
        needed: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank deficient problem: {0}")]
    RankDeficient(String),
}

pub type Result<T> = std::result::Result<T, Error>;
