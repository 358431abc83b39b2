use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function (e.g. `t <= 0`).
    #[error("domain error: {0}")]
    Domain(String),

    /// A tabulated radial profile was queried beyond its last radius.
    #[error("radius {radius} is beyond the tabulated profile range [0, {r_max}]")]
    OutOfRange { radius: f64, r_max: f64 },

    /// The requested combination is not covered by the method.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The integrand of a Green function is singular at `x = y`.
    #[error("Green function is singular at x = y")]
    Singular,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
