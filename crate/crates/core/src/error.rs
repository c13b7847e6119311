use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Variants map onto the CLI exit-code table through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("domain error: function is not finite at eigenvalue {eigenvalue}")]
    Domain { eigenvalue: f64 },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("constraint drift {drift:.3e} exceeds {limit:.1e} at x = {x}")]
    Drift { x: f64, drift: f64, limit: f64 },

    #[error("trajectory blew up (|p| > {bound:.1e}) at x = {escape}")]
    Singularity { escape: f64, bound: f64 },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("normalization failure: endpoint residual {residual:.3e} exceeds {limit:.1e}")]
    Normalization { residual: f64, limit: f64 },

    #[error("cannot classify block of size {m} with algebra dimension {d}")]
    Classification { m: usize, d: usize },

    #[error("saturation: eigenvalue {lambda} needs a center beyond |c| <= {cap}")]
    Saturation { lambda: f64, cap: f64 },

    #[error("runaway walk: {steps} steps without absorption")]
    Runaway { steps: usize },

    #[error("x = {x} outside schedule range [{lo}, {hi}]")]
    Range { x: f64, lo: f64, hi: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 1 input, 2 resource, 3 simulation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_)
            | Error::Dimension { .. }
            | Error::Range { .. }
            | Error::Json(_)
            | Error::Io(_) => 1,
            Error::Resource(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
