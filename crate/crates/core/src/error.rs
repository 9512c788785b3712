use thiserror::Error;

/// Errors produced by the approximation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("time {t} is outside the interpolated range [0, {end})")]
    OutOfRange { t: f64, end: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("invalid discount factor {beta}: must lie in (0, 1)")]
    InvalidDiscount { beta: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e}): {hint}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        hint: &'static str,
    },

    #[error("measures live on different boxes")]
    BoxMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the failure is numerical (divergence, non-convergence) rather than
    /// a malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::SimulationDiverged { .. } | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
