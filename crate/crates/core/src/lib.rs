//! Weakly-supervised video anomaly detection over precomputed frame
//! embeddings of ego-centric driving footage.
//!
//! The pipeline is: decode `.ftbf` features ([`features`]), apply a feature
//! transformation ([`ftb`]), pool into snippets, score snippets with a
//! temporal encoder ([`model`]) trained by top-k magnitude MIL on video-level
//! labels ([`trainer`]), and evaluate frame-level ROC-AUC ([`evaluator`]).

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod features;
pub mod ftb;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod trainer;

pub use error::{DecodeError, Error, Result};
pub use features::{FeatureSequence, Manifest, ManifestEntry};
pub use ftb::{apply_ftb, FtbMode, TransformedFeature};
pub use matrix::Matrix;
pub use model::{ModelConfig, ModelParams, SnippetOutput};
pub use trainer::{Bag, TrainConfig};
