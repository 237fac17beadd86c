use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::{fuse, fuse_backward, AttentionCache, AttentionParams};
use super::head::{regress_score, regress_score_backward, HeadCache, RegressionHead};
use super::loss::{finetune_loss, mse_loss, mse_loss_grad, rank_loss, rank_loss_grad};
use super::{FusionConfig, FusionMode};
use crate::checkpoint::Checkpoint;
use crate::encoders::{EncoderConfig, Feature, ProjectionCache, QualityCache, QualityEncoder, SemanticEncoder};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::render::{render_six_views, stitch_views, ImageSource, ProjectedImage, RenderConfig};
use crate::rng::derive_seed;
use crate::tensor::ParamSet;

pub const CHECKPOINT_KIND: &str = "finetune";

/// Everything needed to rebuild a fine-tuned model, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub render: RenderConfig,
    /// Quality encoder; its input size must equal the render size.
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub head_hidden: usize,
    /// Seed of the frozen semantic backbone, fixed across experiments.
    pub semantic_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let render = RenderConfig::default();
        ModelConfig {
            encoder: EncoderConfig {
                input_height: render.height,
                input_width: render.width,
                ..EncoderConfig::default()
            },
            render,
            fusion: FusionConfig::default(),
            head_hidden: 64,
            semantic_seed: 0x5e3a_471c,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.encoder.validate()?;
        if self.encoder.input_height != self.render.height || self.encoder.input_width != self.render.width {
            return Err(Error::Config(format!(
                "encoder input {}x{} must equal render size {}x{}",
                self.encoder.input_height, self.encoder.input_width, self.render.height, self.render.width
            )));
        }
        self.fusion.validate(self.encoder.embedding_dim)?;
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        Ok(())
    }

    /// The semantic encoder reads the stitched `2H×3W` image.
    pub fn semantic_encoder(&self) -> EncoderConfig {
        EncoderConfig {
            input_height: 2 * self.encoder.input_height,
            input_width: 3 * self.encoder.input_width,
            seed: self.semantic_seed,
            ..self.encoder.clone()
        }
    }
}

/// A labelled sample with its six views rendered and the frozen semantic
/// backbone output precomputed.
#[derive(Debug, Clone)]
pub struct FinetuneSample {
    pub content_id: u32,
    pub distortion_id: u32,
    pub level: u32,
    pub mos: f64,
    pub views: Vec<ProjectedImage>,
    pub semantic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneModel {
    pub config: ModelConfig,
    pub quality: QualityEncoder,
    pub semantic: SemanticEncoder,
    pub attention: AttentionParams,
    pub head: RegressionHead,
}

/// Gradients for every trainable group; the semantic backbone has none.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneGrads {
    pub quality: ParamSet,
    pub projection: ParamSet,
    pub attention: ParamSet,
    pub head: ParamSet,
}

impl FinetuneGrads {
    pub fn groups(&self) -> [&ParamSet; 4] {
        [&self.quality, &self.projection, &self.attention, &self.head]
    }

    fn add_assign(&mut self, other: &FinetuneGrads) {
        self.quality.add_assign(&other.quality);
        self.projection.add_assign(&other.projection);
        self.attention.add_assign(&other.attention);
        self.head.add_assign(&other.head);
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|g| g.all_finite())
    }
}

#[derive(Debug, Clone)]
enum FusionCache {
    Attention(ProjectionCache, AttentionCache),
    /// Index of the winning view per dimension.
    Max(Vec<usize>),
    Avg,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    views: Vec<QualityCache>,
    fusion: FusionCache,
    head: HeadCache,
}

/// Mean losses of one batch and the summed gradients.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    pub mse: f64,
    pub rank: f64,
    pub predictions: Vec<f64>,
    pub grads: FinetuneGrads,
}

impl FinetuneModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let quality = QualityEncoder::new(EncoderConfig {
            seed: derive_seed(seed, &[1]),
            ..config.encoder.clone()
        })?;
        let semantic = SemanticEncoder::new(config.semantic_encoder())?;
        let d = config.encoder.embedding_dim;
        let attention = AttentionParams::new(d, config.fusion.num_heads, config.fusion.d_f(d), derive_seed(seed, &[2]))?;
        let head = RegressionHead::new(d, config.head_hidden, derive_seed(seed, &[3]));
        Ok(FinetuneModel {
            config,
            quality,
            semantic,
            attention,
            head,
        })
    }

    pub fn zero_grads(&self) -> FinetuneGrads {
        FinetuneGrads {
            quality: self.quality.params.zeros_like(),
            projection: self.semantic.projection.zeros_like(),
            attention: self.attention.params.zeros_like(),
            head: self.head.params.zeros_like(),
        }
    }

    pub fn trainable_mut(&mut self) -> [&mut ParamSet; 4] {
        [
            &mut self.quality.params,
            &mut self.semantic.projection,
            &mut self.attention.params,
            &mut self.head.params,
        ]
    }

    /// Renders the six axis views, stitches them and runs the frozen
    /// semantic backbone once.
    pub fn prepare(&self, cloud: &PointCloud, source: ImageSource) -> Result<(Vec<ProjectedImage>, Vec<f64>)> {
        let views = render_six_views(cloud, &self.config.render, source)?;
        let stitched = stitch_views(&views)?;
        let semantic = self.semantic.backbone_features(&stitched)?;
        Ok((views, semantic))
    }

    pub fn prepare_sample(
        &self,
        cloud: &PointCloud,
        content_id: u32,
        distortion_id: u32,
        level: u32,
        mos: f64,
    ) -> Result<FinetuneSample> {
        let source = ImageSource {
            content_id,
            distortion_id,
            mixed_with: None,
        };
        let (views, semantic) = self.prepare(cloud, source)?;
        Ok(FinetuneSample {
            content_id,
            distortion_id,
            level,
            mos,
            views,
            semantic,
        })
    }

    pub fn forward(&self, views: &[ProjectedImage], semantic: &[f64]) -> Result<(f64, ForwardCache)> {
        if views.len() != 6 {
            return Err(Error::Shape(format!("model expects 6 views, got {}", views.len())));
        }
        let (feats, caches): (Vec<Feature>, Vec<QualityCache>) =
            views.iter().map(|v| self.quality.forward(v)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
        let d = self.config.encoder.embedding_dim;
        let (fused, fusion) = match self.config.fusion.mode {
            FusionMode::Attention => {
                let (g, pc) = self.semantic.project(semantic)?;
                let (fused, ac) = fuse(&g, &feats, &self.attention)?;
                (fused, FusionCache::Attention(pc, ac))
            }
            FusionMode::Max => {
                let mut arg = vec![0usize; d];
                for (k, a) in arg.iter_mut().enumerate() {
                    for (i, f) in feats.iter().enumerate() {
                        if f.values[k] > feats[*a].values[k] {
                            *a = i;
                        }
                    }
                }
                let fused = arg.iter().enumerate().map(|(k, &i)| feats[i].values[k]).collect();
                (fused, FusionCache::Max(arg))
            }
            FusionMode::Avg => {
                let fused = (0..d).map(|k| feats.iter().map(|f| f.values[k]).sum::<f64>() / 6.0).collect();
                (fused, FusionCache::Avg)
            }
        };
        let (score, head) = regress_score(&fused, &self.head)?;
        Ok((score, ForwardCache { views: caches, fusion, head }))
    }

    /// Accumulates gradients of a loss whose derivative w.r.t. the score is
    /// `grad_score`.
    pub fn backward(&self, cache: &ForwardCache, grad_score: f64, grads: &mut FinetuneGrads) {
        let g_fused = regress_score_backward(&self.head, &cache.head, grad_score, &mut grads.head);
        let d = g_fused.len();
        let g_views: Vec<Vec<f64>> = match &cache.fusion {
            FusionCache::Attention(pc, ac) => {
                let (g_sem, g_views) = fuse_backward(&self.attention, ac, &g_fused, &mut grads.attention);
                self.semantic.backward_projection(pc, &g_sem, &mut grads.projection);
                g_views
            }
            FusionCache::Max(arg) => {
                let mut g = vec![vec![0.0; d]; 6];
                for (k, &i) in arg.iter().enumerate() {
                    g[i][k] = g_fused[k];
                }
                g
            }
            FusionCache::Avg => vec![g_fused.iter().map(|v| v / 6.0).collect(); 6],
        };
        for (vc, gv) in cache.views.iter().zip(&g_views) {
            self.quality.backward(vc, gv, &mut grads.quality);
        }
    }

    pub fn predict(&self, sample: &FinetuneSample) -> Result<f64> {
        Ok(self.forward(&sample.views, &sample.semantic)?.0)
    }

    pub fn predict_cloud(&self, cloud: &PointCloud) -> Result<f64> {
        let (views, semantic) = self.prepare(cloud, ImageSource::default())?;
        Ok(self.forward(&views, &semantic)?.0)
    }

    /// Fine-tuning loss `α·mse + (1−α)·rank` over a batch and its gradients.
    /// Per-sample work runs in parallel; reduction is in batch order.
    pub fn batch_loss(&self, batch: &[&FinetuneSample], alpha: f64) -> Result<BatchOutcome> {
        let forwards: Vec<(f64, ForwardCache)> = batch
            .par_iter()
            .map(|s| self.forward(&s.views, &s.semantic))
            .collect::<Result<_>>()?;
        let pred: Vec<f64> = forwards.iter().map(|(p, _)| *p).collect();
        let target: Vec<f64> = batch.iter().map(|s| s.mos).collect();
        let mse = mse_loss(&pred, &target)?;
        let gm = mse_loss_grad(&pred, &target)?;
        let (rank, gr) = if alpha < 1.0 {
            (rank_loss(&pred, &target)?, rank_loss_grad(&pred, &target)?)
        } else {
            (0.0, vec![0.0; pred.len()])
        };
        let loss = finetune_loss(mse, rank, alpha);
        let partial: Vec<FinetuneGrads> = forwards
            .par_iter()
            .enumerate()
            .map(|(i, (_, cache))| {
                let mut g = self.zero_grads();
                self.backward(cache, alpha * gm[i] + (1.0 - alpha) * gr[i], &mut g);
                g
            })
            .collect();
        let mut grads = self.zero_grads();
        for g in &partial {
            grads.add_assign(g);
        }
        Ok(BatchOutcome {
            loss,
            mse,
            rank,
            predictions: pred,
            grads,
        })
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u64, step: u64) -> Result<Checkpoint> {
        let config = serde_json::to_value(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, seed, config);
        ck.epoch = epoch;
        ck.step = step;
        ck.add_section("quality", self.quality.params.clone());
        ck.add_section("semantic_backbone", self.semantic.backbone.clone());
        ck.add_section("semantic_projection", self.semantic.projection.clone());
        ck.add_section("attention", self.attention.params.clone());
        ck.add_section("head", self.head.params.clone());
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: ModelConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let mut m = FinetuneModel::new(config, ck.seed)?;
        m.quality.params.load_from(ck.section("quality")?)?;
        m.semantic.backbone.load_from(ck.section("semantic_backbone")?)?;
        m.semantic.projection.load_from(ck.section("semantic_projection")?)?;
        m.attention.params.load_from(ck.section("attention")?)?;
        m.head.params.load_from(ck.section("head")?)?;
        Ok(m)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::pointcloud::shapes;

    pub(crate) fn tiny_config(mode: FusionMode) -> ModelConfig {
        let render = RenderConfig::default().with_size(16, 16);
        ModelConfig {
            encoder: EncoderConfig {
                input_height: 16,
                input_width: 16,
                channels: 3,
                widths: vec![3, 4],
                embedding_dim: 8,
                seed: 0,
            },
            render,
            fusion: FusionConfig {
                mode,
                num_heads: 2,
                scale_dim: None,
            },
            head_hidden: 6,
            semantic_seed: 11,
        }
    }

    pub(crate) fn samples(model: &FinetuneModel, n: usize) -> Vec<FinetuneSample> {
        (0..n)
            .map(|i| {
                let cloud = shapes::reference_content(i, 400, i as u64);
                model.prepare_sample(&cloud, i as u32, 1, 1, 1.0 + i as f64).unwrap()
            })
            .collect()
    }

    /// Central differences of the batch loss w.r.t. a stride of every
    /// trainable parameter group.
    fn full_gradient_check(mode: FusionMode) {
        let model = FinetuneModel::new(tiny_config(mode), 5).unwrap();
        let data = samples(&model, 2);
        let batch: Vec<&FinetuneSample> = data.iter().collect();
        let out = model.batch_loss(&batch, 0.5).unwrap();
        let eps = 1e-6;
        let mut checked = 0;
        for group in 0..4 {
            let len = out.grads.groups()[group].len();
            for t in 0..len {
                let n = out.grads.groups()[group].get(t).len();
                for i in (0..n).step_by(11) {
                    let shifted = |delta: f64| {
                        let mut m = model.clone();
                        m.trainable_mut()[group].get_mut(t).data[i] += delta;
                        m.batch_loss(&batch, 0.5).unwrap().loss
                    };
                    let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                    let an = out.grads.groups()[group].get(t).data[i];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    assert!(rel < 1e-3, "group {group} tensor {t}[{i}]: fd {fd} vs {an}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn attention_model_gradients() {
        full_gradient_check(FusionMode::Attention);
    }

    #[test]
    fn pooling_model_gradients() {
        full_gradient_check(FusionMode::Avg);
    }

    #[test]
    fn checkpoint_restores_predictions() {
        let model = FinetuneModel::new(tiny_config(FusionMode::Attention), 2).unwrap();
        let s = &samples(&model, 1)[0];
        let ck = Checkpoint::from_bytes(&model.to_checkpoint(2, 0, 0).unwrap().to_bytes().unwrap()).unwrap();
        let back = FinetuneModel::from_checkpoint(&ck).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.predict(s).unwrap(), model.predict(s).unwrap());
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let mut cfg = tiny_config(FusionMode::Attention);
        cfg.render = cfg.render.with_size(32, 32);
        assert!(FinetuneModel::new(cfg, 0).unwrap_err().is_config());
        let mut cfg = tiny_config(FusionMode::Attention);
        cfg.fusion.num_heads = 3;
        assert!(FinetuneModel::new(cfg, 0).unwrap_err().is_config());
    }
}
