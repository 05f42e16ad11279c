use thiserror::Error;

/// Errors produced by the toolkit library.
///
/// `Shape`, `Domain` and `Config` are caller mistakes; `InfeasibleAlignment`
/// and `OracleRefused` are well-defined refusals that callers may want to
/// branch on; `Parse` and `Io` come from file handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot tokenize: character {ch:?} is not in the vocabulary")]
    Tokenize { ch: char },

    #[error(
        "no valid alignment: label of length {label_len} needs at least {min_frames} frames, posterior has {frames}"
    )]
    InfeasibleAlignment {
        label_len: usize,
        min_frames: usize,
        frames: usize,
    },

    #[error("oracle refused: {0}")]
    OracleRefused(String),

    #[error("parse error in {file} at {at}: {message}")]
    Parse {
        file: String,
        /// Byte offset for binary formats, `line N` for text formats.
        at: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(
        file: impl Into<String>,
        at: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            file: file.into(),
            at: at.into(),
            message: message.into(),
        }
    }
}
