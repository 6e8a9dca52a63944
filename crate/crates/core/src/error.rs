use thiserror::Error;

/// Errors raised while loading, compiling, or solving preference models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed schema document: {0}")]
    SchemaFormat(String),

    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),

    #[error("attribute `{attribute}` lists value `{value}` twice")]
    DuplicateValue { attribute: String, value: String },

    #[error("attribute `{attribute}` has {size} value(s); at least 2 are required")]
    DomainTooSmall { attribute: String, size: usize },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("value `{value}` is not in the domain of attribute `{attribute}`")]
    UnknownValue { attribute: String, value: String },

    #[error("attribute `{0}` is not boolean; write `{0}=<value>` instead of a bare atom")]
    NotBoolean(String),

    #[error("attribute `{0}` is bound twice")]
    ConflictingBinding(String),

    #[error("catalog row {row}: {message}")]
    CatalogRow { row: usize, message: String },

    #[error("malformed catalog document: {0}")]
    CatalogFormat(String),

    #[error("duplicate item id `{0}`")]
    DuplicateId(String),

    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("statement on line {line}: {message}")]
    Statement { line: usize, message: String },

    #[error("statement on line {line} needs {size} model pairs, above the cap of {cap}")]
    ModelCapExceeded { line: usize, size: u128, cap: usize },

    #[error(
        "statement on line {line} strictly prefers a model to itself ({model}); \
         it can never be satisfied"
    )]
    SelfContradictory { line: usize, model: String },

    #[error("degree {degree} is outside 1..={attributes}")]
    DegreeOutOfRange { degree: usize, attributes: usize },

    #[error("invalid kernel parameters: {0}")]
    KernelParams(String),

    #[error("coefficient for monomial size {k} overflows at {attributes} attributes")]
    CoefficientOverflow { k: usize, attributes: usize },

    #[error("explicit feature space has {dimension} monomials, above the oracle limit of {limit}")]
    OracleLimit { dimension: u128, limit: u128 },

    #[error("invalid solver configuration: {0}")]
    SolverConfig(String),

    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("rating {rating} for `{id}` is outside the scale {min}..={max}")]
    RatingOutOfScale {
        id: String,
        rating: i32,
        min: i32,
        max: i32,
    },

    #[error("no comparable (unequally rated) pairs")]
    NoComparablePairs,

    #[error("invalid experiment configuration: {0}")]
    ExperimentConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
