use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped so a front end can classify them: caller mistakes
/// (`Shape`, `Usage`), defective input data (the parse and format variants,
/// `Data`, `Training`) and the operating system (`Io`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("image parse error at byte {offset}: {kind}")]
    ImageParse { offset: usize, kind: ImageParseKind },

    #[error("weights file: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("weights file: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("weights file truncated at byte {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("weights file: duplicate record name {name:?}")]
    DuplicateRecord { name: String },

    #[error("weights file: malformed record {name:?}: {reason}")]
    MalformedRecord { name: String, reason: String },

    #[error("annotations line {line}: {reason}")]
    Annotation { line: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageParseKind {
    BadMagic,
    BadHeader,
    UnsupportedMaxval(u32),
    Truncated,
}

impl std::fmt::Display for ImageParseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ImageParseKind::BadMagic => write!(f, "expected P5 or P6 magic"),
            ImageParseKind::BadHeader => write!(f, "malformed header token"),
            ImageParseKind::UnsupportedMaxval(v) => write!(f, "maxval {v} (only 255 supported)"),
            ImageParseKind::Truncated => write!(f, "payload truncated"),
        }
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for mistakes in how the API or CLI was invoked.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Shape { .. } | Error::Usage(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
