use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: dangling link ids, wrong vector lengths, unnormalized distributions.
    #[error("validation error: {0}")]
    Validation(String),

    /// A generator or solver parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The mean-field equations only have a stationary solution below unit load.
    #[error("refusing to solve at load {rho}: the network is not stable unless every link load is below 1")]
    Unstable { rho: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Numerical integration failure in the heavy-traffic solver.
    #[error("integration failed: {0}")]
    Integration(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parameter(_) | Error::Unstable { .. } => 2,
            Error::NonConvergence { .. } | Error::Integration(_) => 3,
            Error::Invariant(_) => 4,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }
}
