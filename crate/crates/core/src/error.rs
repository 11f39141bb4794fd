use thiserror::Error;

pub type Result<T> = std::result::Result<T, OscError>;

#[derive(Debug, Clone, Error)]
pub enum OscError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A tuning voltage left the validity range of a model. Solvers treat
    /// this as a recoverable step rejection.
    #[error("{what}: eta = {eta} V outside validity range [{lo}, {hi}] V")]
    OutOfRange {
        what: String,
        eta: f64,
        lo: f64,
        hi: f64,
    },

    #[error("no oscillation: small-signal net conductance {conductance} S is not negative")]
    NoOscillation { conductance: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("singular Jacobian in {0}")]
    SingularJacobian(String),

    #[error("singular model: {0}")]
    SingularModel(String),

    #[error("inconsistent result: {0}")]
    Inconsistent(String),

    #[error("extraction failed at eta = {eta} V: {source}")]
    Extraction {
        eta: f64,
        #[source]
        source: Box<OscError>,
    },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl OscError {
    /// Errors that a line search may recover from by shortening the step.
    pub fn is_step_rejection(&self) -> bool {
        matches!(self, OscError::OutOfRange { .. } | OscError::Domain(_))
    }
}

impl From<std::io::Error> for OscError {
    fn from(e: std::io::Error) -> Self {
        OscError::Io(e.to_string())
    }
}
