use std::path::PathBuf;

use crate::solver::SolverState;
use crate::trace::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// A step produced a non-finite or exploding iterate. `last_finite` is the
    /// state the step started from.
    #[error("iterate diverged at iteration {k}")]
    Divergence {
        k: usize,
        last_finite: Box<SolverState>,
    },

    /// A run stopped on divergence; `trace` holds every row logged before it.
    #[error("run diverged after {} logged rows", trace.rows.len())]
    RunDiverged { trace: Box<RunTrace> },

    #[error("budget of {budget} evaluations cannot pay for one iteration ({per_iteration})")]
    EmptyTrace { budget: u64, per_iteration: u64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("degenerate start: psi(x0) - min psi = {0} is not positive")]
    DegenerateStart(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for divergence-type failures (as opposed to configuration or I/O).
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::RunDiverged { .. })
    }
}
