use thiserror::Error;

/// Errors produced by tensor ops, block forwards, model building and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("group mismatch: {0}")]
    GroupMismatch(String),

    #[error("head mismatch: {0}")]
    HeadMismatch(String),

    #[error("invalid shrink ratio: {0}")]
    InvalidRatio(String),

    #[error("invalid hybrid pattern: {0}")]
    InvalidPattern(String),

    #[error("non-finite input in {0}")]
    NonFinite(String),

    #[error("value {0} is not on this tape")]
    NotOnTape(usize),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("parameter `{0}` has unexpected dims {1:?}")]
    ParamDims(String, Vec<usize>),

    #[error("not foldable: {0}")]
    NotFoldable(String),

    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),

    // Weight container
    #[error("bad magic bytes (expected \"NVTW\")")]
    BadMagic,

    #[error("unsupported container version {0}")]
    BadVersion(u8),

    #[error("truncated file")]
    TruncatedFile,

    #[error("duplicate entry name `{0}`")]
    DuplicateName(String),

    #[error("unsupported dtype code {0}")]
    DtypeUnsupported(u8),

    // Config documents
    #[error("config parse error: {0}")]
    ParseError(String),

    #[error("config: unknown key `{0}`")]
    UnknownKey(String),

    #[error("config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
