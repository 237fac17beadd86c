//! Semantic-guided multi-view fusion, quality regression and fine-tuning.

mod attention;
mod head;
mod loss;
mod model;
mod trainer;

pub use attention::{
    fuse, fuse_backward, multi_head_cross_attention, AttentionCache, AttentionParams,
};
pub use head::{regress_score, regress_score_backward, HeadCache, RegressionHead};
pub use loss::{finetune_loss, mse_loss, mse_loss_grad, rank_loss, rank_loss_grad};
pub use model::{FinetuneGrads, FinetuneModel, FinetuneSample, ModelConfig};
pub use trainer::{finetune_epoch, FinetuneMetrics, FinetuneOptimizer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::StepDecay;

/// How the six view features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Cross-attention with the semantic feature as the single query.
    #[default]
    Attention,
    /// Element-wise maximum over views.
    Max,
    /// Element-wise mean over views.
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub num_heads: usize,
    /// `d_f` in `softmax(QKᵀ/√d_f)`; `None` uses the embedding dimension.
    pub scale_dim: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Attention,
            num_heads: 8,
            scale_dim: None,
        }
    }
}

impl FusionConfig {
    pub fn d_f(&self, embedding_dim: usize) -> f64 {
        self.scale_dim.unwrap_or(embedding_dim as f64)
    }

    pub fn validate(&self, embedding_dim: usize) -> Result<()> {
        if self.num_heads == 0 || embedding_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "fusion.num_heads ({}) must divide embedding_dim ({embedding_dim})",
                self.num_heads
            )));
        }
        if let Some(d) = self.scale_dim {
            if !(d > 0.0) {
                return Err(Error::Config(format!("fusion.scale_dim must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Weight of the MSE term; `1 − α` weights the rank term.
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub head_hidden: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            alpha: 0.5,
            batch_size: 16,
            epochs: 150,
            learning_rate: 0.003,
            lr_decay: 0.9,
            lr_decay_every: 5,
            weight_decay: 1e-4,
            head_hidden: 64,
        }
    }
}

impl FinetuneConfig {
    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.learning_rate,
            gamma: self.lr_decay,
            every: self.lr_decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("finetune.{m}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0,1], got {}", self.alpha));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            return fail("learning-rate schedule must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative".into());
        }
        if self.head_hidden == 0 {
            return fail("head_hidden must be positive".into());
        }
        Ok(())
    }
}
