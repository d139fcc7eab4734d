use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol `{symbol}` is not in alphabet {alphabet}")]
    UnknownSymbol { symbol: String, alphabet: String },

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("alphabet mismatch: expected {expected}, found {found}")]
    AlphabetMismatch { expected: String, found: String },

    #[error("invalid distribution: {0}")]
    InvalidDist(String),

    #[error("head left the allocated tape window after {steps} steps; widen the window")]
    WindowOverflow { steps: usize },

    #[error("transition table: {0}")]
    InvalidTable(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("code parameter is not a vertex code: {0}")]
    NotVertex(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input support too large for exact enumeration: {count} strings (limit {limit})")]
    SupportTooLarge { count: u128, limit: u128 },

    #[error("singular regression design: {0}")]
    SingularDesign(String),

    #[error("free coordinate set does not preserve K = 0: {0}")]
    FreeSetViolation(String),

    #[error("finite-difference stencil left the domain of K near ({h}, {k})")]
    BoundaryProximity { h: f64, k: f64 },

    #[error("utm invariant violated: {0}")]
    UtmInvariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
