use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no feasible satellite selection after {attempts} resampled centers")]
    SelectionInfeasible { attempts: usize },

    #[error("degenerate link (s={s}, k={k}): {what}")]
    DegenerateLink { s: usize, k: usize, what: &'static str },

    #[error("singular system in {context} (condition estimate {cond:.3e})")]
    SingularSystem { context: String, cond: f64 },

    #[error("lambda bracket failed for satellite {s}: power {power:.3e} still exceeds budget {budget:.3e} at lambda = {lambda:.1e}")]
    BracketFailure { s: usize, power: f64, budget: f64, lambda: f64 },

    #[error("solver failed at outer iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("architecture mismatch: expected {expected}, container holds {found}")]
    ArchMismatch { expected: String, found: String },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors raised by the numerical solvers rather than by input validation.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::DegenerateLink { .. }
                | Error::SingularSystem { .. }
                | Error::BracketFailure { .. }
                | Error::Solver { .. }
                | Error::SelectionInfeasible { .. }
        )
    }
}
