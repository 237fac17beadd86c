use crate::encoders::Feature;
use crate::error::{Error, Result};
use crate::nn::{dot, log_sum_exp, softmax};
use crate::tensor::ParamSet;

use super::NegativeQueue;

/// Loss value and its gradient with respect to the anchor feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastLoss {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
}

fn check_inputs(anchor: &Feature, others: &[&Feature], r: f64, tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Usage(format!("mask ratio must lie in [0,1], got {r}")));
    }
    for f in std::iter::once(&anchor).chain(others) {
        if !f.normalized {
            return Err(Error::Usage("contrastive inputs must be normalized features".into()));
        }
        if f.dim() != anchor.dim() {
            return Err(Error::Shape(format!("feature dims differ: {} vs {}", f.dim(), anchor.dim())));
        }
    }
    Ok(())
}

/// `−log(exp(a·p/τ) / Σ_{x∈denominator} exp(a·x/τ))` and its anchor gradient,
/// accumulated into `grad` with weight `w`.
fn log_ratio_term(anchor: &[f64], pos: &[f64], denominator: &[&[f64]], tau: f64, w: f64, grad: &mut [f64]) -> f64 {
    let logits: Vec<f64> = denominator.iter().map(|x| dot(anchor, x) / tau).collect();
    let weights = softmax(&logits);
    for (k, g) in grad.iter_mut().enumerate() {
        let expected: f64 = weights.iter().zip(denominator).map(|(p, x)| p * x[k]).sum();
        *g += w * (expected - pos[k]) / tau;
    }
    w * (log_sum_exp(&logits) - dot(anchor, pos) / tau)
}

/// The two-positive contrast shared by the distortion-wise and content-wise
/// terms: `r·ℓ(p1) + (1−r)·ℓ(p2)` with `ℓ(p) = −log(exp(a·p/τ)/Σ_neg exp(a·n/τ))`.
/// With `include_positive` each positive also enters its own denominator.
pub fn contrast_loss(
    anchor: &Feature,
    pos1: &Feature,
    pos2: &Feature,
    negs: &[&Feature],
    r: f64,
    tau: f64,
    include_positive: bool,
) -> Result<ContrastLoss> {
    if negs.is_empty() {
        return Err(Error::Usage("contrastive loss needs at least one negative".into()));
    }
    let mut all = vec![pos1, pos2];
    all.extend_from_slice(negs);
    check_inputs(anchor, &all, r, tau)?;
    let a = &anchor.values;
    let mut grad = vec![0.0; a.len()];
    let mut value = 0.0;
    for (pos, w) in [(pos1, r), (pos2, 1.0 - r)] {
        if w == 0.0 {
            continue;
        }
        let mut denom: Vec<&[f64]> = Vec::with_capacity(negs.len() + 1);
        if include_positive {
            denom.push(&pos.values);
        }
        denom.extend(negs.iter().map(|n| n.values.as_slice()));
        value += log_ratio_term(a, &pos.values, &denom, tau, w, &mut grad);
    }
    Ok(ContrastLoss { value, grad_anchor: grad })
}

/// Distortion-wise term: negatives are same-content renders under the other
/// distortions. The denominator holds negatives only.
pub fn distortion_loss(
    anchor: &Feature,
    pos1: &Feature,
    pos2: &Feature,
    negs: &[&Feature],
    r: f64,
    tau: f64,
) -> Result<ContrastLoss> {
    contrast_loss(anchor, pos1, pos2, negs, r, tau, false)
}

pub fn distortion_loss_with(
    anchor: &Feature,
    pos1: &Feature,
    pos2: &Feature,
    negs: &[&Feature],
    r: f64,
    tau: f64,
    include_positive: bool,
) -> Result<ContrastLoss> {
    contrast_loss(anchor, pos1, pos2, negs, r, tau, include_positive)
}

/// Content-wise term: negatives are queue entries from other contents.
pub fn content_loss(
    anchor: &Feature,
    pos1: &Feature,
    pos2: &Feature,
    queue: &NegativeQueue,
    anchor_content: u32,
    r: f64,
    tau: f64,
) -> Result<ContrastLoss> {
    content_loss_with(anchor, pos1, pos2, queue, anchor_content, r, tau, false)
}

#[allow(clippy::too_many_arguments)]
pub fn content_loss_with(
    anchor: &Feature,
    pos1: &Feature,
    pos2: &Feature,
    queue: &NegativeQueue,
    anchor_content: u32,
    r: f64,
    tau: f64,
    include_positive: bool,
) -> Result<ContrastLoss> {
    let negs = queue.eligible(anchor_content);
    if negs.is_empty() {
        return Err(Error::Usage(format!(
            "queue holds no negatives from contents other than {anchor_content}"
        )));
    }
    contrast_loss(anchor, pos1, pos2, &negs, r, tau, include_positive)
}

/// `λ·Ld + (1−λ)·Lc`.
pub fn pretrain_loss(ld: f64, lc: f64, lambda: f64) -> f64 {
    lambda * ld + (1.0 - lambda) * lc
}

/// `θ_k ← m·θ_k + (1−m)·θ_q` for every entry.
pub fn momentum_update(key: &mut ParamSet, query: &ParamSet, m: f64) -> Result<()> {
    key.check_same_structure(query)?;
    for (k, q) in key.tensors_mut().iter_mut().zip(query.tensors()) {
        for (kv, qv) in k.data.iter_mut().zip(&q.data) {
            *kv = m * *kv + (1.0 - m) * qv;
        }
    }
    Ok(())
}
