use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("branch {branch} out of range for {dataset} ({branches} branches)")]
    BranchOutOfRange {
        dataset: String,
        branch: usize,
        branches: usize,
    },

    #[error("chart {chart} out of range ({charts} charts)")]
    ChartOutOfRange { chart: usize, charts: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("point lies on the pole of a Möbius stage")]
    Pole,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(std::path::PathBuf),

    #[error("missing dataset {0}; run `generate` first")]
    MissingDataset(std::path::PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
