use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed container: {0}")]
    Container(String),

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("tensor {name}: expected shape {expected}, found {found:?}")]
    Shape {
        name: String,
        expected: String,
        found: Vec<usize>,
    },

    #[error("tensor {name}: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("json error in {path}: {message}")]
    Json { path: String, message: String },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid configuration field {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("point {index} is at or behind the camera plane (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("segmentation error: {0}")]
    Segmentation(String),

    #[error("doll specification: {0}")]
    DollSpec(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("non-finite objective at iteration {iteration}: {breakdown}")]
    Diverged { iteration: usize, breakdown: String },

    #[error("window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable short name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Container(_) => "container",
            Error::MissingTensor(_) => "missing_tensor",
            Error::Shape { .. } => "shape",
            Error::InvalidTensor { .. } => "invalid_tensor",
            Error::Json { .. } => "json",
            Error::NonFinite(_) => "non_finite",
            Error::Config { .. } => "config",
            Error::BehindCamera { .. } => "behind_camera",
            Error::Segmentation(_) => "segmentation",
            Error::DollSpec(_) => "doll_spec",
            Error::Input(_) => "input",
            Error::Degenerate(_) => "degenerate",
            Error::Diverged { .. } => "diverged",
            Error::Window { .. } => "window",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
