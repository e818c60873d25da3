use thiserror::Error;

/// Errors raised by the solvers, fitters and I/O front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("singular mode matching: |q_s - q_a| = {separation:.3e} below degeneracy threshold")]
    SingularMatching { separation: f64 },

    #[error("ill-conditioned linear system (pivot condition estimate {estimate:.3e})")]
    IllConditioned { estimate: f64 },

    #[error("grid under-resolves the field: h*q_max = {value:.3e} exceeds {limit}")]
    UnderResolved { value: f64, limit: f64 },

    #[error("domain too short: evanescent tail at x_max is {tail:.3e} (needs <= {limit:.0e})")]
    InsufficientDomain { tail: f64, limit: f64 },

    #[error("operation requires the {expected} regime, got {actual}")]
    WrongRegime { expected: &'static str, actual: String },

    #[error("kappa extraction failed: {0}")]
    KappaExtraction(String),

    #[error("normalization impossible: |psi_m(0)| = {0:.3e}")]
    Normalization(f64),

    #[error("fit window is empty or carries no signal")]
    EmptyWindow,

    #[error("phase unwrap failure between x = {x_left} and x = {x_right}: step {step:.6} rad")]
    PhaseUnwrap { x_left: f64, x_right: f64, step: f64 },

    #[error("field is not normalizable on this grid: {0}")]
    NotNormalizable(String),

    #[error("quadrature tail not converged: last-decade share {share:.3e}")]
    TailNotConverged { share: f64 },

    #[error("wave packet clipped by the grid: edge amplitude ratio {ratio:.3e}")]
    PacketClipped { ratio: f64 },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed table: {0}")]
    Table(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Table(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
