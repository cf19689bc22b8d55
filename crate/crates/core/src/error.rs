use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at line {line}")]
    InvalidUtf8 { path: PathBuf, line: usize },
    #[error("bitext line counts differ: source has {src} lines, target has {trg}")]
    LineCountMismatch { src: usize, trg: usize },
    #[error("blank line {line} in bitext; alignment would shift")]
    BlankBitextLine { line: usize },
    #[error("unknown token {token:?}")]
    UnknownToken { token: String },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid sentence: {0}")]
    InvalidSentence(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("sentence of length {len} exceeds max_len {max_len}")]
    Overlong { len: usize, max_len: usize },
    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: {a} hypotheses vs {b} references")]
    LengthMismatch { a: usize, b: usize },
    #[error("direction mismatch: {0}")]
    DirectionMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("infeasible task: {0}")]
    Infeasible(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::InvalidUtf8 { .. } => "invalid_utf8",
            Error::LineCountMismatch { .. } => "line_count_mismatch",
            Error::BlankBitextLine { .. } => "blank_bitext_line",
            Error::UnknownToken { .. } => "unknown_token",
            Error::InvalidVocabulary(_) => "invalid_vocabulary",
            Error::InvalidSentence(_) => "invalid_sentence",
            Error::VocabularyMismatch(_) => "vocabulary_mismatch",
            Error::Empty(_) => "empty",
            Error::Overlong { .. } => "overlong",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::NonFinite(_) => "non_finite",
            Error::Shape(_) => "shape",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::DirectionMismatch(_) => "direction_mismatch",
            Error::Config(_) => "config",
            Error::Infeasible(_) => "infeasible",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
