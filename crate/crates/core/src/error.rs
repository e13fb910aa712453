use std::path::PathBuf;

/// Sensor requested by a model but absent from a measurement set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingSensor {
    pub region: String,
    /// Index local to the region's location list.
    pub local_index: usize,
    /// Index into the full location list of the dataset the model was trained on.
    pub global_index: usize,
    pub location_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("ingestion error for unit {unit:?}: missing locations {missing:?}")]
    MismatchedLocations { unit: String, missing: Vec<String> },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("missing measurements for sensors: {}", format_missing(.0))]
    MissingSensors(Vec<MissingSensor>),

    #[error("all cross-validation folds failed: {0}")]
    AllFoldsFailed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_missing(missing: &[MissingSensor]) -> String {
    missing
        .iter()
        .map(|m| {
            format!(
                "{}[{}] (location {} = {})",
                m.region, m.local_index, m.global_index, m.location_id
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
