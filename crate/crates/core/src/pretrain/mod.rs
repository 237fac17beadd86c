//! Contrastive pre-training of the quality encoder: patch-mixed anchors,
//! distortion-wise and content-wise contrast, a momentum key encoder and a
//! FIFO negative queue.

mod batch;
mod loss;
mod queue;
mod trainer;

pub use batch::{sample_batch, ContentRenders, PretrainBatch, PretrainData, PretrainItem};
pub use loss::{
    content_loss, content_loss_with, contrast_loss, distortion_loss, distortion_loss_with, momentum_update,
    pretrain_loss, ContrastLoss,
};
pub use queue::NegativeQueue;
pub use trainer::{
    batch_objective, encode_keys, enqueue_keys, pretrain_epoch, pretrain_step, BatchKeys, PretrainMetrics,
    PretrainState, StepStats, CHECKPOINT_KIND,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::StepDecay;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Weight of the distortion-wise term; `1 − λ` weights the content term.
    pub lambda_weight: f64,
    pub temperature: f64,
    /// Key-encoder momentum.
    pub momentum: f64,
    pub queue_capacity: usize,
    pub rotations_per_cloud: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// SGD momentum, distinct from the key-encoder momentum.
    pub optimizer_momentum: f64,
    pub weight_decay: f64,
    pub mask_ratio_min: f64,
    pub mask_ratio_max: f64,
    /// Adds each positive to its own denominator (InfoNCE form).
    pub include_positive_in_denominator: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lambda_weight: 0.3,
            temperature: 0.2,
            momentum: 0.999,
            queue_capacity: 4096,
            rotations_per_cloud: 6,
            batch_size: 128,
            epochs: 200,
            learning_rate: 0.005,
            lr_decay: 0.2,
            lr_decay_every: 10,
            optimizer_momentum: 0.95,
            weight_decay: 1e-4,
            mask_ratio_min: 0.25,
            mask_ratio_max: 0.75,
            include_positive_in_denominator: false,
        }
    }
}

impl PretrainConfig {
    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.learning_rate,
            gamma: self.lr_decay,
            every: self.lr_decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("pretrain.{m}")));
        if !(0.0..=1.0).contains(&self.lambda_weight) {
            return fail(format!("lambda_weight must lie in [0,1], got {}", self.lambda_weight));
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.queue_capacity == 0 || self.queue_capacity % self.batch_size != 0 {
            return fail(format!(
                "queue_capacity ({}) must be a positive multiple of batch_size ({})",
                self.queue_capacity, self.batch_size
            ));
        }
        if self.rotations_per_cloud == 0 {
            return fail("rotations_per_cloud must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            return fail("learning-rate schedule must be positive".into());
        }
        if !(0.0..1.0).contains(&self.optimizer_momentum) || !(self.weight_decay >= 0.0) {
            return fail("optimizer_momentum must lie in [0,1) and weight_decay be non-negative".into());
        }
        if !(0.0 <= self.mask_ratio_min && self.mask_ratio_min <= self.mask_ratio_max && self.mask_ratio_max <= 1.0) {
            return fail(format!(
                "mask ratio bounds must satisfy 0 <= min <= max <= 1, got [{}, {}]",
                self.mask_ratio_min, self.mask_ratio_max
            ));
        }
        Ok(())
    }
}
