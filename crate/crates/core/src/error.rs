use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("missing cell: {source_name} has no entry for year {year}, age {age}")]
    MissingCell {
        source_name: String,
        year: i32,
        age: u32,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive rate at age {age}, year {year}; zero cells must carry weight 0")]
    NonPositiveRate { age: u32, year: i32 },

    #[error("could not bracket a root for year {year}")]
    BracketFailure { year: i32 },

    #[error("unidentifiable model specification: {0}")]
    UnidentifiableSpec(String),

    #[error("all years flagged as outliers")]
    DegenerateContamination,

    #[error("missing loss for model {model} at period {period}")]
    MissingLoss { model: u32, period: i32 },

    #[error("{0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input {path}; run the earlier stage first")]
    MissingArtifact { path: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
