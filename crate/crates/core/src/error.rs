use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("canonical chart evaluated at z = {z}, within pole guard of |z| = 1")]
    PoleSingularity { z: f64 },

    #[error("step size collapsed below {min_step:e}; last good time {last_good_tau}")]
    StepUnderflow { last_good_tau: f64, min_step: f64 },

    #[error(
        "newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("newton jacobian M - I is singular (|det| = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("{failed} of {total} ensemble members failed to propagate")]
    TooManyFailures { failed: usize, total: usize },

    #[error("quantum propagation not converged: dt halving changed {observable} by {change:e}")]
    ConvergenceFailure {
        observable: &'static str,
        change: f64,
    },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
