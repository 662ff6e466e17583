use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure while parsing an ENVI header or raster.
#[derive(Debug, thiserror::Error)]
pub enum EnviError {
    #[error("missing required header key `{0}`")]
    MissingKey(String),
    #[error("invalid value for header key `{key}`: {value:?}")]
    InvalidValue { key: String, value: String },
    #[error("unsupported ENVI data type {0}")]
    UnsupportedDataType(u32),
    #[error("malformed header at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("raster size mismatch: header implies {expected} bytes from offset {offset}, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64, offset: u64 },
    #[error("value {value} at element {index} does not fit data type {dtype}")]
    OutOfRange { value: f64, index: usize, dtype: u32 },
}

/// Failure while decoding a checkpoint file.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: u64, needed: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed record at offset {offset}: {message}")]
    Malformed { offset: u64, message: String },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: u64 },
    #[error("degenerate batch statistics: {0}")]
    Degenerate(String),
    #[error("transfer error: {0}")]
    Transfer(String),
    #[error("ENVI parse error in {path}: {source}")]
    Envi {
        path: PathBuf,
        #[source]
        source: EnviError,
    },
    #[error("checkpoint error in {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::Transfer(_) | Error::Json(_) => 1,
            Error::Data(_)
            | Error::Envi { .. }
            | Error::Checkpoint { .. }
            | Error::Io { .. }
            | Error::Csv(_) => 2,
            Error::NonFinite { .. } | Error::Degenerate(_) => 3,
        }
    }
}
