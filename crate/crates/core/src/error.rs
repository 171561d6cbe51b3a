//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: parameter and
//! configuration problems, data/IO problems, and numerical failures.

use std::path::PathBuf;

use thiserror::Error;

use crate::mask::{BoundingBox, ImageSize};

#[derive(Debug, Error)]
pub enum Error {
    /// Two grids that must agree in size do not.
    #[error("shape mismatch in {context}: {expected} vs {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: ImageSize,
        found: ImageSize,
    },

    /// A spatial size the network cannot consume.
    #[error("input size {size} not divisible by network downsampling factor {factor}")]
    IndivisibleSize { size: ImageSize, factor: usize },

    /// A box annotation that does not fit inside its image.
    #[error("invalid box annotation {bbox} for image size {size}")]
    InvalidBox { bbox: BoundingBox, size: ImageSize },

    /// A scalar parameter outside its documented range.
    #[error("invalid parameter {name}={value}: {requirement}")]
    Param {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    /// Bad run/stage configuration (empty split, inconsistent flags, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed file contents; `offset` is the byte position of the problem.
    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    /// Filesystem failure with the path that triggered it.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Backward invoked against activations from an outdated forward pass.
    #[error("stale activation cache: parameters changed since forward (usage error)")]
    StaleCache,

    /// Fusion filter sampling kept nothing but the pipeline was asked to
    /// train on pseudo labels.
    #[error("empty pseudo-label set: object filter rejected every record")]
    EmptyPseudoSet,

    /// NaN or infinity detected during training/evaluation.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code class used by the CLI: 3 = config, 4 = data/IO, 5 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param { .. } | Error::Config(_) => 3,
            Error::Numerical(_) => 5,
            _ => 4,
        }
    }
}
