//! Binary-to-multi-class fusion segmentation of retinal arteries and veins.
//!
//! The crate holds a small reverse-mode autodiff engine ([`graph`]), the
//! networks built on it ([`segmenter`], [`discriminator`], [`fusion`]), their
//! objectives ([`losses`]) and training loop ([`training`]), dataset
//! ingestion ([`datasets`]), the evaluation suite ([`metrics`]) and a
//! synthetic crossing-scene generator ([`synthetic`]).

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod discriminator;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod segmenter;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use datasets::{ClassScheme, Geometry, LabelMap, LabeledSample, Size, SplitSpec};
pub use discriminator::{DiscriminatorConfig, DiscriminatorModel};
pub use error::{Error, Result};
pub use fusion::{FusionConfig, FusionModel};
pub use losses::{LossReport, LossWeights};
pub use metrics::MetricReport;
pub use segmenter::{MergeBlockSpec, SegmenterConfig, SegmenterModel};
pub use synthetic::{CrossingSceneSpec, Mask};
pub use tensor::{Scalar, Tensor};
pub use training::{TrainConfig, Toggles, Trainer};
