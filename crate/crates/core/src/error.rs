use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed partitions, parameter/size mismatches, bad group indices.
    #[error("structural error: {0}")]
    Structural(String),
    /// Parameter outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// The data violates a model requirement (negative counts, value above the truncation bound, ...).
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 data validation, 3 config, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Input(_) => 2,
            Error::Config(_) | Error::Json(_) => 3,
            Error::Numeric(_) => 4,
            Error::Structural(_) | Error::Domain(_) => 3,
            Error::Io(_) => 2,
        }
    }
}
