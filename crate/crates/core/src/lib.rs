//! Contrastive pre-training and semantic-guided multi-view fusion for
//! no-reference point cloud quality assessment.
//!
//! The pipeline renders point clouds to images, pre-trains a quality-aware
//! image encoder on patch-mixed anchors with distortion-wise and
//! content-wise contrast, then fine-tunes it with a cross-attention fusion
//! of six axis-aligned views guided by a frozen semantic encoder.

pub mod anchor;
pub mod checkpoint;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod finetune;
pub mod nn;
pub mod pointcloud;
pub mod pretrain;
pub mod render;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, InitMode};
pub use encoders::{EncoderConfig, Feature, QualityEncoder, SemanticEncoder};
pub use eval::{CrossValReport, EvalOutcome, EvalResult};
pub use finetune::{FinetuneConfig, FinetuneModel, FinetuneSample, FusionConfig, FusionMode};
pub use pointcloud::{DatasetManifest, ManifestEntry, PointCloud};
pub use pretrain::{PretrainConfig, PretrainState};
pub use render::{ProjectedImage, RenderConfig};
