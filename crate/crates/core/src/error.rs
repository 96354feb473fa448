use thiserror::Error;

/// Errors produced by table ingestion, model construction, fitting and
/// decomposition.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// More variables than the dense bitmask representation supports.
    #[error("too many variables: {0} (at most {max} supported)", max = crate::subsets::MAX_VARS)]
    Capacity(usize),

    #[error("duplicate variable label `{0}`")]
    DuplicateLabel(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    /// Input cells do not form a probability distribution.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// A margin vector does not Möbius-invert to nonnegative cell masses.
    #[error("incoherent margins: cell {cell} inverts to {value:.6e}")]
    IncoherentMargins { cell: String, value: f64 },

    /// Malformed input text; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Column set of a data file does not match the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Structurally invalid request (subset relations, nesting, block layout).
    #[error("domain error: {0}")]
    Domain(String),

    /// Empty conditioning stratum.
    #[error("zero-base stratum: {0}")]
    ZeroBase(String),

    /// A probability required to be positive is zero, so its log is undefined.
    #[error("log-domain error: {0}")]
    LogDomain(String),

    /// A parameter point outside the valid region of the model family.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Observed information matrix is numerically singular; `direction`
    /// names the parameter with the largest weight in the null eigenvector.
    #[error("singular information matrix (null direction strongest in {direction})")]
    SingularInformation { direction: String },

    /// Optimizer ran out of iterations; carries the last iterate for diagnosis.
    #[error(
        "no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e}, loglik {loglik:.6})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        loglik: f64,
        last_values: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
