use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate quadric: {0}")]
    DegenerateQuadric(String),
    #[error("quadric centroid is at or behind the camera principal plane (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid line: {0}")]
    InvalidLine(String),
    #[error("conic is not an ellipse: {0}")]
    NonEllipse(String),
    #[error("degenerate hull: {0}")]
    DegenerateHull(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("insufficient observations: need {needed}, got {got}")]
    InsufficientObservations { needed: usize, got: usize },
    #[error("underconstrained problem: {0}")]
    Underconstrained(String),
    #[error("singular normal equations after damping escalation (lambda = {lambda:e})")]
    SingularSystem { lambda: f64 },
    #[error("gauge fixing failed: {0}")]
    GaugeFixing(String),
    #[error("insufficient matches: need {needed}, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("object not visible: {0}")]
    NotVisible(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } | Error::Json(_) => {
                ErrorCategory::Data
            }
            _ => ErrorCategory::Numerical,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}
