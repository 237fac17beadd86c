//! Quality-aware encoder `F`, frozen semantic encoder `G`, and L2
//! normalization.
//!
//! Both encoders share one backbone family: a stack of 3×3 stride-2
//! convolutions with ReLU, a global average pool and a linear projection.
//! Inputs are shifted by −0.5 so a white background maps to +0.5.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::nn::linear::{linear_backward, linear_forward};
use crate::nn::{relu_backward_inplace, relu_inplace};
use crate::render::ProjectedImage;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub channels: usize,
    /// Output channels of each stride-2 stage.
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_height: 512,
            input_width: 512,
            channels: 3,
            widths: vec![16, 32, 64],
            embedding_dim: 128,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn downsampling(&self) -> usize {
        1 << self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("encoder needs at least one stage of positive width".into()));
        }
        if self.channels != 3 {
            return Err(Error::Config("encoders expect 3-channel input".into()));
        }
        let f = self.downsampling();
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % f != 0
            || self.input_width % f != 0
        {
            return Err(Error::Config(format!(
                "input {}x{} must be divisible by the downsampling factor {f}",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    fn geometries(&self) -> Vec<ConvGeometry> {
        let mut out = Vec::with_capacity(self.widths.len());
        let (mut c, mut h, mut w) = (self.channels, self.input_height, self.input_width);
        for &width in &self.widths {
            let g = ConvGeometry {
                in_channels: c,
                out_channels: width,
                in_height: h,
                in_width: w,
                kernel: 3,
                stride: 2,
                padding: 1,
            };
            (c, h, w) = (width, g.out_height(), g.out_width());
            out.push(g);
        }
        out
    }

    fn pooled_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

/// An embedding vector; `normalized` records whether it has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Feature {
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        Ok(Feature {
            values: l2_normalize(&values)?,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

/// `v / ‖v‖`; a zero (or non-finite) norm is an error rather than NaN.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Numeric(format!("cannot normalize a vector with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Gradient through `y = v/‖v‖`: `(g − y(y·g)) / ‖v‖`.
pub fn l2_normalize_backward(unit: &[f64], norm: f64, grad: &[f64]) -> Vec<f64> {
    let proj = crate::nn::dot(unit, grad);
    unit.iter()
        .zip(grad)
        .map(|(y, g)| (g - y * proj) / norm)
        .collect()
}

fn image_to_chw(image: &ProjectedImage, cfg: &EncoderConfig) -> Result<Vec<f64>> {
    if image.height != cfg.input_height || image.width != cfg.input_width || image.channels != cfg.channels {
        return Err(Error::Shape(format!(
            "encoder expects {}x{}x{}, got {}x{}x{}",
            cfg.input_height, cfg.input_width, cfg.channels, image.height, image.width, image.channels
        )));
    }
    let (h, w, c) = (image.height, image.width, image.channels);
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                out[(k * h + y) * w + x] = image.pixels[(y * w + x) * c + k] - 0.5;
            }
        }
    }
    Ok(out)
}

fn init_backbone(cfg: &EncoderConfig, params: &mut ParamSet, seed: u64) {
    let mut rng = rng_from(seed);
    for (i, g) in cfg.geometries().iter().enumerate() {
        let fan_in = (g.in_channels * g.kernel * g.kernel) as f64;
        params.push(
            format!("conv{i}.weight"),
            Tensor::randn(&[g.out_channels, g.in_channels, 3, 3], (2.0 / fan_in).sqrt(), &mut rng),
        );
        params.push(format!("conv{i}.bias"), Tensor::zeros(&[g.out_channels]));
    }
}

fn init_projection(in_dim: usize, out_dim: usize, params: &mut ParamSet, seed: u64) {
    let mut rng = rng_from(seed);
    params.push(
        "proj.weight",
        Tensor::randn(&[out_dim, in_dim], (1.0 / in_dim as f64).sqrt(), &mut rng),
    );
    params.push("proj.bias", Tensor::zeros(&[out_dim]));
}

/// Activations kept for the backward pass of the conv stack.
#[derive(Debug, Clone)]
pub struct BackboneCache {
    /// Input of every stage; entry 0 is the preprocessed image.
    inputs: Vec<Vec<f64>>,
    /// Post-ReLU output of the last stage.
    last: Vec<f64>,
}

fn backbone_forward(cfg: &EncoderConfig, params: &ParamSet, image: &ProjectedImage) -> Result<(Vec<f64>, BackboneCache)> {
    let mut x = image_to_chw(image, cfg)?;
    let geoms = cfg.geometries();
    let mut inputs = Vec::with_capacity(geoms.len());
    for (i, g) in geoms.iter().enumerate() {
        let mut y = conv2d_forward(g, &x, &params.get(2 * i).data, &params.get(2 * i + 1).data);
        relu_inplace(&mut y);
        inputs.push(std::mem::replace(&mut x, y));
    }
    let g = geoms.last().expect("validated");
    let area = (g.out_height() * g.out_width()) as f64;
    let pooled = x
        .chunks(g.out_height() * g.out_width())
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Ok((pooled, BackboneCache { inputs, last: x }))
}

/// Backpropagates `grad_pooled` into `grads` (same layout as the backbone
/// params) and optionally returns the gradient w.r.t. the CHW input.
fn backbone_backward(
    cfg: &EncoderConfig,
    params: &ParamSet,
    cache: &BackboneCache,
    grad_pooled: &[f64],
    grads: &mut ParamSet,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let geoms = cfg.geometries();
    let g = geoms.last().expect("validated");
    let area = g.out_height() * g.out_width();
    let mut grad: Vec<f64> = grad_pooled
        .iter()
        .flat_map(|&gp| std::iter::repeat_n(gp / area as f64, area))
        .collect();
    let mut output = &cache.last;
    for i in (0..geoms.len()).rev() {
        relu_backward_inplace(output, &mut grad);
        let need = i > 0 || want_input_grad;
        let (gw, gb) = split_pair(grads, 2 * i);
        let gin = conv2d_backward(
            &geoms[i],
            &cache.inputs[i],
            &params.get(2 * i).data,
            &grad,
            gw,
            gb,
            need,
        );
        match gin {
            Some(gi) if i > 0 => {
                grad = gi;
                output = &cache.inputs[i];
            }
            other => return other,
        }
    }
    None
}

fn split_pair(grads: &mut ParamSet, idx: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads.tensors_mut()[idx..idx + 2].split_at_mut(1);
    (&mut a[0].data, &mut b[0].data)
}

/// The pre-trainable quality encoder `F`: conv backbone, linear projection
/// to `embedding_dim`, L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityEncoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

/// Everything the backward pass of [`QualityEncoder`] needs.
#[derive(Debug, Clone)]
pub struct QualityCache {
    backbone: BackboneCache,
    pooled: Vec<f64>,
    unit: Vec<f64>,
    norm: f64,
}

impl QualityEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        init_backbone(&config, &mut params, derive_seed(config.seed, &[0]));
        init_projection(
            config.pooled_dim(),
            config.embedding_dim,
            &mut params,
            derive_seed(config.seed, &[1]),
        );
        Ok(QualityEncoder { config, params })
    }

    fn proj_index(&self) -> usize {
        2 * self.config.widths.len()
    }

    /// Unnormalized output `F(x)`.
    pub fn raw(&self, image: &ProjectedImage) -> Result<Vec<f64>> {
        let (pooled, _) = backbone_forward(&self.config, &self.params, image)?;
        let p = self.proj_index();
        Ok(linear_forward(
            &self.params.get(p).data,
            Some(&self.params.get(p + 1).data),
            &pooled,
            self.config.embedding_dim,
        ))
    }

    /// `F(x)/‖F(x)‖`.
    pub fn encode(&self, image: &ProjectedImage) -> Result<Feature> {
        Ok(self.forward(image)?.0)
    }

    pub fn forward(&self, image: &ProjectedImage) -> Result<(Feature, QualityCache)> {
        let (pooled, backbone) = backbone_forward(&self.config, &self.params, image)?;
        let p = self.proj_index();
        let raw = linear_forward(
            &self.params.get(p).data,
            Some(&self.params.get(p + 1).data),
            &pooled,
            self.config.embedding_dim,
        );
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = l2_normalize(&raw)?;
        let feature = Feature {
            values: unit.clone(),
            normalized: true,
        };
        Ok((
            feature,
            QualityCache {
                backbone,
                pooled,
                unit,
                norm,
            },
        ))
    }

    /// Accumulates parameter gradients of a scalar whose gradient w.r.t. the
    /// normalized feature is `grad_feature`.
    pub fn backward(&self, cache: &QualityCache, grad_feature: &[f64], grads: &mut ParamSet) {
        self.backward_impl(cache, grad_feature, grads, false);
    }

    /// Like [`Self::backward`] and also returns the gradient w.r.t. input
    /// pixels in HWC order.
    pub fn backward_with_input(&self, cache: &QualityCache, grad_feature: &[f64], grads: &mut ParamSet) -> Vec<f64> {
        let chw = self
            .backward_impl(cache, grad_feature, grads, true)
            .expect("input gradient requested");
        let (h, w, c) = (self.config.input_height, self.config.input_width, self.config.channels);
        let mut hwc = vec![0.0; chw.len()];
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    hwc[(y * w + x) * c + k] = chw[(k * h + y) * w + x];
                }
            }
        }
        hwc
    }

    fn backward_impl(
        &self,
        cache: &QualityCache,
        grad_feature: &[f64],
        grads: &mut ParamSet,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let grad_raw = l2_normalize_backward(&cache.unit, cache.norm, grad_feature);
        let p = self.proj_index();
        let (gw, gb) = split_pair(grads, p);
        let grad_pooled = linear_backward(&self.params.get(p).data, &cache.pooled, &grad_raw, gw, Some(gb));
        backbone_backward(&self.config, &self.params, &cache.backbone, &grad_pooled, grads, want_input)
    }
}

/// The semantic encoder `G`. Its backbone is frozen; only the projection is
/// trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEncoder {
    pub config: EncoderConfig,
    pub backbone: ParamSet,
    pub projection: ParamSet,
}

impl SemanticEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut backbone = ParamSet::new();
        init_backbone(&config, &mut backbone, derive_seed(config.seed, &[10]));
        let mut projection = ParamSet::new();
        init_projection(
            config.pooled_dim(),
            config.embedding_dim,
            &mut projection,
            derive_seed(config.seed, &[11]),
        );
        Ok(SemanticEncoder {
            config,
            backbone,
            projection,
        })
    }

    /// Replaces the frozen backbone with externally supplied weights.
    pub fn load_backbone(&mut self, weights: &ParamSet) -> Result<()> {
        self.backbone.load_from(weights)
    }

    /// Frozen backbone output for a composed image; constant during
    /// fine-tuning, so callers may cache it.
    pub fn backbone_features(&self, composed: &ProjectedImage) -> Result<Vec<f64>> {
        Ok(backbone_forward(&self.config, &self.backbone, composed)?.0)
    }

    pub fn encode(&self, composed: &ProjectedImage) -> Result<Feature> {
        let pooled = self.backbone_features(composed)?;
        Ok(self.project(&pooled)?.0)
    }

    /// Projection + normalization of cached backbone features.
    pub fn project(&self, pooled: &[f64]) -> Result<(Feature, ProjectionCache)> {
        let raw = linear_forward(
            &self.projection.get(0).data,
            Some(&self.projection.get(1).data),
            pooled,
            self.config.embedding_dim,
        );
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = l2_normalize(&raw)?;
        Ok((
            Feature {
                values: unit.clone(),
                normalized: true,
            },
            ProjectionCache {
                pooled: pooled.to_vec(),
                unit,
                norm,
            },
        ))
    }

    /// Accumulates projection gradients; the backbone receives none.
    pub fn backward_projection(&self, cache: &ProjectionCache, grad_feature: &[f64], grads: &mut ParamSet) {
        let grad_raw = l2_normalize_backward(&cache.unit, cache.norm, grad_feature);
        let (gw, gb) = split_pair(grads, 0);
        linear_backward(&self.projection.get(0).data, &cache.pooled, &grad_raw, gw, Some(gb));
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionCache {
    pooled: Vec<f64>,
    unit: Vec<f64>,
    norm: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn tiny(h: usize, w: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_height: h,
            input_width: w,
            channels: 3,
            widths: vec![4, 6],
            embedding_dim: 5,
            seed,
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ProjectedImage {
        let mut rng = rng_from(seed);
        let mut img = ProjectedImage::filled(h, w, [0.0; 3]);
        for v in &mut img.pixels {
            *v = rng.random();
        }
        img
    }

    #[test]
    fn l2_normalize_cases() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let v = [0.3, -1.2, 2.5];
        let base = l2_normalize(&v).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let n = l2_normalize(&scaled).unwrap();
            for (a, b) in n.iter().zip(&base) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quality_features_are_unit_and_deterministic() {
        let enc = QualityEncoder::new(tiny(16, 16, 3)).unwrap();
        let twin = QualityEncoder::new(tiny(16, 16, 3)).unwrap();
        let img = random_image(16, 16, 1);
        let f = enc.encode(&img).unwrap();
        assert!(f.is_unit(1e-6));
        assert_eq!(f, enc.encode(&img).unwrap());
        assert_eq!(f, twin.encode(&img).unwrap());
        assert!(enc.encode(&random_image(8, 16, 1)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(QualityEncoder::new(tiny(10, 16, 0)).is_err());
        assert!(QualityEncoder::new(EncoderConfig {
            embedding_dim: 0,
            ..tiny(16, 16, 0)
        })
        .is_err());
    }

    /// Central differences of `probe · F(x)/‖F(x)‖` w.r.t. every 7th parameter.
    #[test]
    fn quality_gradients_match_finite_differences() {
        let enc = QualityEncoder::new(tiny(16, 16, 5)).unwrap();
        let img = random_image(16, 16, 2);
        let probe = [0.3, -0.7, 0.2, 0.9, -0.4];
        let value = |e: &QualityEncoder| crate::nn::dot(&e.encode(&img).unwrap().values, &probe);
        let (_, cache) = enc.forward(&img).unwrap();
        let mut grads = enc.params.zeros_like();
        let gin = enc.backward_with_input(&cache, &probe, &mut grads);
        let eps = 1e-6;
        for t in 0..enc.params.len() {
            for i in (0..enc.params.get(t).len()).step_by(7) {
                let mut plus = enc.clone();
                plus.params.get_mut(t).data[i] += eps;
                let mut minus = enc.clone();
                minus.params.get_mut(t).data[i] -= eps;
                let fd = (value(&plus) - value(&minus)) / (2.0 * eps);
                let an = grads.get(t).data[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "{}[{i}]: fd {fd} vs {an}", enc.params.name(t));
            }
        }
        for i in (0..img.pixels.len()).step_by(13) {
            let mut p = img.clone();
            p.pixels[i] += eps;
            let mut m = img.clone();
            m.pixels[i] -= eps;
            let fd = (crate::nn::dot(&enc.encode(&p).unwrap().values, &probe)
                - crate::nn::dot(&enc.encode(&m).unwrap().values, &probe))
                / (2.0 * eps);
            let rel = (fd - gin[i]).abs() / fd.abs().max(gin[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "pixel {i}: fd {fd} vs {}", gin[i]);
        }
    }

    #[test]
    fn semantic_encoder_distinguishes_images_and_projection_grads_match() {
        let enc = SemanticEncoder::new(tiny(32, 48, 7)).unwrap();
        let a = random_image(32, 48, 1);
        let b = random_image(32, 48, 2);
        assert_ne!(enc.encode(&a).unwrap(), enc.encode(&b).unwrap());
        let pooled = enc.backbone_features(&a).unwrap();
        let probe = [1.0, 0.5, -0.5, 0.25, -1.0];
        let (_, cache) = enc.project(&pooled).unwrap();
        let mut grads = enc.projection.zeros_like();
        enc.backward_projection(&cache, &probe, &mut grads);
        let eps = 1e-6;
        for t in 0..2 {
            for i in 0..enc.projection.get(t).len() {
                let mut p = enc.clone();
                p.projection.get_mut(t).data[i] += eps;
                let mut m = enc.clone();
                m.projection.get_mut(t).data[i] -= eps;
                let fd = (crate::nn::dot(&p.project(&pooled).unwrap().0.values, &probe)
                    - crate::nn::dot(&m.project(&pooled).unwrap().0.values, &probe))
                    / (2.0 * eps);
                let an = grads.get(t).data[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "proj[{t}][{i}]: {fd} vs {an}");
            }
        }
    }
}
