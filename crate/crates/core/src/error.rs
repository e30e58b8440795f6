//! Error type shared across the crate.

/// Errors produced by loading, design, estimation, and simulation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing panel cell for unit {unit} at time {time}")]
    MissingCell { unit: String, time: i64 },

    #[error("unknown treatment code {code} for unit {unit} at time {time}")]
    UnknownArmCode { code: i64, unit: String, time: i64 },

    #[error("duplicate row for unit {unit} at time {time}")]
    DuplicateRow { unit: String, time: i64 },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown unit {0}")]
    UnknownUnit(String),

    #[error("self loop on unit {0}")]
    SelfLoop(String),

    #[error("arm relabeling has no mapping for observed code {0}")]
    PartialMapping(i64),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("only one treatment arm present")]
    SingleArm,

    #[error("zero pooled variance with unequal means")]
    DegenerateVariance,

    #[error("no matched bucket contains both arms")]
    EmptyResult,

    #[error("cannot stratify: {0}")]
    CannotStratify(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("weights sum to zero in at least one arm")]
    AllWeightsZero,

    #[error("no within-unit variation in {0}")]
    NoWithinVariation(String),

    #[error("two-way demeaning did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("network has no connected units")]
    IsolatedOnlyNetwork,

    #[error("no units remain after excluding isolated units")]
    EmptyAfterIsolationFilter,

    #[error("config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.to_string(), message: message.into() }
    }
}
