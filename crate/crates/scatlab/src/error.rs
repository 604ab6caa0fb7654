use thiserror::Error;

/// Errors produced by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a precondition (bad gamma, empty grid, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A point fell outside the operation's domain (zero vector, boundary point, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Quadrature failed to reach the requested tolerance; the achieved
    /// error estimate is carried so callers can decide what to do.
    #[error("accuracy error: {context} (achieved {achieved:.3e}, wanted {wanted:.3e})")]
    Accuracy {
        context: String,
        achieved: f64,
        wanted: f64,
    },

    /// The Born series (or the Picard iteration) stopped contracting.
    /// This is a legitimate, reportable outcome, not a bug.
    #[error("divergence: {0}")]
    Divergence(String),

    /// A sample set was too small for the requested fit or stencil.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A field/realization spec violated its own invariants.
    #[error("spec error: {0}")]
    Spec(String),

    /// The source term carries no usable amplitude anywhere on the scan grid.
    #[error("degenerate source: {0}")]
    DegenerateSource(String),

    /// Amplitude extraction residuals did not decrease with radius.
    #[error("extraction unreliable: {0}")]
    ExtractionUnreliable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
