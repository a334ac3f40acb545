use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration or input data problem (bad arguments, malformed files).
    #[error("invalid input: {0}")]
    Input(String),

    /// `g_delta(a|w) > 0` where `g(a|w) = 0`, or a zero normalizer.
    #[error("positivity violation at a = {a}, w = {w}: {detail}")]
    Positivity { a: String, w: String, detail: String },

    #[error("saturated learner has an empty stratum {stratum} with alpha = 0; use a positive smoothing alpha")]
    EmptyStratum { stratum: String },

    #[error("IRLS did not converge after {iterations} iterations (score norm {score_norm:.3e}); last iterate {last:?}")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        last: Vec<f64>,
    },

    #[error("tilting submodel `{submodel}` failed: {source}")]
    Tilt {
        submodel: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for this error: 1 for configuration or input errors,
    /// 2 for numerical or estimation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Unsupported(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
            Error::EmptyStratum { .. } => 1,
            Error::Positivity { .. }
            | Error::NonConvergence { .. }
            | Error::Tilt { .. }
            | Error::Numerical(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
