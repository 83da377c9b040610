use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("annotation color {color:?} at (row {row}, col {col}) is not in the class scheme")]
    UnmappedColor { color: [u8; 3], row: usize, col: usize },

    #[error("pad target {target:?} is smaller than source {source_size:?}")]
    TargetTooSmall { source_size: (usize, usize), target: (usize, usize) },

    #[error("{in_channels} input channels are not divisible into {out_channels} groups")]
    ChannelMismatch { in_channels: usize, out_channels: usize },

    #[error("spatial size {height}x{width} is not divisible by {divisor}")]
    BadSpatialDims { height: usize, width: usize, divisor: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value {value} outside the open interval (0, 1) in {what}")]
    DomainError { what: &'static str, value: f64 },

    #[error("expected exactly 3 side outputs, got {0}")]
    WrongSideCount(usize),

    #[error("non-finite loss in component `{0}`")]
    NonFiniteLoss(String),

    #[error("no foreground ground-truth pixels")]
    AllCountsZero,

    #[error("Mann-Whitney U test needs two non-empty samples")]
    EmptySample,

    #[error("scene spec cannot be satisfied: {0}")]
    UnsatisfiableSpec(String),

    #[error("crossing mask is empty")]
    EmptyMask,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint architecture mismatch in section `{section}`: {detail}")]
    ArchitectureMismatch { section: String, detail: String },

    #[error("missing path {0}")]
    MissingPath(PathBuf),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
