use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index error: {index} out of range [0, {bound})")]
    Index { index: usize, bound: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("truncated file {0}")]
    Truncated(PathBuf),

    #[error("checksum mismatch in {path}: stored {stored:08x}, computed {computed:08x}")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("clip {path} has extents {found:?}, manifest expects {expected:?}")]
    ExtentMismatch {
        path: PathBuf,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("no confident samples: all {0} pseudo-labels fell below the confidence threshold")]
    NoConfidentSamples(usize),

    #[error("training diverged at step {step} ({phase} phase, batch {batch}): {detail}")]
    Diverged {
        step: u64,
        phase: String,
        batch: u64,
        detail: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
