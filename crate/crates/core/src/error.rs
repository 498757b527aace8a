use thiserror::Error;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("ill-conditioned {what}: condition number {cond:.3e} exceeds {limit:.1e}")]
    Conditioning { what: String, cond: f64, limit: f64 },

    #[error("no convergence after {periods} periods (last change {last_change:.3e})")]
    Convergence { periods: usize, last_change: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {got} usable points, need at least {needed}")]
    InsufficientData { needed: usize, got: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors caused by bad input rather than by the numerics.
    pub fn is_configuration(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::Io(_))
    }
}
