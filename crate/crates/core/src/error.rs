use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported data type: {0}")]
    UnsupportedDataType(String),

    #[error("dims/affine inconsistency: {0}")]
    Inconsistent(String),

    #[error("invalid volume metadata: {0}")]
    InvalidMeta(String),

    #[error("voxel index {index:?} out of range for dims {dims:?}")]
    IndexOutOfRange { index: [usize; 3], dims: [usize; 3] },

    #[error("label {0} not present in volume")]
    LabelAbsent(u16),

    #[error("empty foreground")]
    EmptyForeground,

    #[error("normalized component {component} = {value} outside [0, 1]")]
    OutOfUnitRange { component: usize, value: f64 },

    #[error("trilinear interpolation requested on a label volume")]
    TrilinearOnLabels,

    #[error("not a rotation matrix: {0}")]
    NotRotation(String),

    #[error("more ground truths ({rows}) than queries ({cols})")]
    TooManyRows { rows: usize, cols: usize },

    #[error("non-finite cost entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("unknown label {0}")]
    UnknownLabel(u16),

    #[error("grid mismatch: {0:?} vs {1:?}")]
    GridMismatch([usize; 3], [usize; 3]),

    #[error("empty ground-truth set")]
    EmptyGroundTruth,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scene generation failed: {0}")]
    Scene(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("query bank is not identity-bound: {0}")]
    NotSteerable(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
