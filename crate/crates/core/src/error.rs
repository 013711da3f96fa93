use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("value {value} at dimension {dim} outside bounds [{lo}, {hi}]")]
    OutOfBounds {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("image has no foreground pixels")]
    NoForeground,

    #[error(
        "enumeration needs {required} evaluations but the cap is {cap}; use greedy_attack instead"
    )]
    BudgetExhausted { required: u128, cap: u128 },

    #[error("candidate vector has no set bits")]
    EmptyCandidates,

    #[error("invalid softmax vector: {0}")]
    InvalidSoftmax(String),

    #[error("catalog line {line}: {message}")]
    CatalogParse { line: usize, message: String },

    #[error("ppm: {0}")]
    Ppm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
