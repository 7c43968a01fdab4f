use thiserror::Error;

/// Crate-wide error type. Variants are grouped by how the command line
/// reports them: configuration problems, malformed data, and numerical
/// failures map to distinct process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("iteration did not converge after {iterations} steps (last estimate {last_estimate})")]
    Convergence {
        last_estimate: f64,
        iterations: usize,
    },

    #[error("rank-deficient system: {0}")]
    Rank(String),

    #[error("degenerate view: {0}")]
    DegenerateView(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid sample request: {0}")]
    Sampling(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("invalid lag: {0}")]
    Lag(String),

    #[error("no readout trained for lag {0}")]
    MissingReadout(usize),

    #[error("degenerate reservoir: {0}")]
    DegenerateReservoir(String),

    #[error("empty image sequence")]
    EmptySequence,

    #[error("degenerate statistical test: {0}")]
    DegenerateTest(String),

    #[error("graph is not connected: {0}")]
    Connectivity(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("evaluation protocol violation: {0}")]
    Protocol(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
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

/// Exit-code buckets used by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad configuration or arguments (exit code 2).
    Config,
    /// Malformed or missing input data (exit code 3).
    Data,
    /// Numerical failure such as divergence or a degenerate system (exit code 4).
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Config(_) => ErrorCategory::Config,
            Dimension(_)
            | DegenerateView(_)
            | Split(_)
            | Sampling(_)
            | Lag(_)
            | EmptySequence
            | Protocol(_)
            | Format(_)
            | Io { .. }
            | Json(_) => ErrorCategory::Data,
            Convergence { .. }
            | Rank(_)
            | TrainingDiverged { .. }
            | MissingReadout(_)
            | DegenerateReservoir(_)
            | DegenerateTest(_)
            | Connectivity(_)
            | DegenerateGraph(_) => ErrorCategory::Numeric,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numeric => 4,
        }
    }

    /// Wraps an i/o error with the path it occurred on.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
