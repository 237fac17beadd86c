use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    content_loss_with, distortion_loss_with, momentum_update, pretrain_loss, sample_batch, NegativeQueue,
    PretrainBatch, PretrainConfig, PretrainData,
};
use crate::checkpoint::Checkpoint;
use crate::encoders::{EncoderConfig, Feature, QualityEncoder};
use crate::error::{Error, Result};
use crate::nn::{Optimizer, Sgd};
use crate::rng::derive_seed;
use crate::tensor::ParamSet;

pub const CHECKPOINT_KIND: &str = "pretrain";

/// Query encoder, momentum key encoder, negative queue and optimizer.
#[derive(Debug, Clone)]
pub struct PretrainState {
    pub query: QualityEncoder,
    pub key: QualityEncoder,
    pub queue: NegativeQueue,
    pub optimizer: Sgd,
    pub step: u64,
    pub epoch: u64,
}

impl PretrainState {
    /// The key encoder starts as an exact copy of the query encoder.
    pub fn new(encoder: &EncoderConfig, config: &PretrainConfig) -> Result<Self> {
        config.validate()?;
        let query = QualityEncoder::new(encoder.clone())?;
        let optimizer = Sgd::new(&query.params, config.optimizer_momentum, config.weight_decay);
        Ok(PretrainState {
            key: query.clone(),
            query,
            queue: NegativeQueue::new(config.queue_capacity)?,
            optimizer,
            step: 0,
            epoch: 0,
        })
    }

    pub fn to_checkpoint(&self, seed: u64, config: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, seed, config);
        ck.step = self.step;
        ck.epoch = self.epoch;
        ck.add_section("query", self.query.params.clone());
        ck.add_section("key", self.key.params.clone());
        ck.add_section("queue", self.queue.to_params());
        ck.add_section("velocity", self.optimizer.velocity.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, encoder: &EncoderConfig, config: &PretrainConfig) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let mut state = PretrainState::new(encoder, config)?;
        state.query.params.load_from(ck.section("query")?)?;
        state.key.params.load_from(ck.section("key")?)?;
        state.optimizer.velocity.load_from(ck.section("velocity")?)?;
        state.queue = NegativeQueue::from_params(config.queue_capacity, ck.section("queue")?)?;
        state.step = ck.step;
        state.epoch = ck.epoch;
        Ok(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub distortion_loss: f64,
    pub content_loss: f64,
}

/// One JSON-lines record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    pub epoch: u64,
    pub steps: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub mean_distortion_loss: f64,
    pub mean_content_loss: f64,
    pub queue_len: usize,
}

/// Key features of every distortion for each `(group, rotation)` used by a
/// batch, in first-use order.
#[derive(Debug, Clone)]
pub struct BatchKeys {
    order: Vec<(usize, usize)>,
    keys: Vec<Vec<Feature>>,
}

/// Encodes the batch's keys with the key encoder.
pub fn encode_keys(state: &PretrainState, data: &PretrainData, batch: &PretrainBatch) -> Result<BatchKeys> {
    let mut order = Vec::new();
    let mut seen = HashMap::new();
    for item in &batch.items {
        seen.entry((item.group, item.rotation)).or_insert_with(|| {
            order.push((item.group, item.rotation));
            order.len() - 1
        });
    }
    let jobs: Vec<(usize, usize, usize)> = order
        .iter()
        .flat_map(|&(g, r)| (0..data.groups[g].distortions()).map(move |d| (g, r, d)))
        .collect();
    let feats: Vec<Feature> = jobs
        .par_iter()
        .map(|&(g, r, d)| state.key.encode(data.image(g, r, d)))
        .collect::<Result<_>>()?;
    let mut it = feats.into_iter();
    let keys = order
        .iter()
        .map(|&(g, _)| it.by_ref().take(data.groups[g].distortions()).collect())
        .collect();
    Ok(BatchKeys { order, keys })
}

/// Pushes every key of the batch onto the negative queue.
pub fn enqueue_keys(state: &mut PretrainState, data: &PretrainData, keys: &BatchKeys) -> Result<()> {
    for (&(g, _), feats) in keys.order.iter().zip(&keys.keys) {
        let content = data.groups[g].content_id;
        state.queue.enqueue_batch(feats.iter().cloned().map(|f| (f, content)))?;
    }
    Ok(())
}

/// Batch-mean `λ·Ld + (1−λ)·Lc` and its gradient with respect to the query
/// parameters, with keys and queue held fixed.
pub fn batch_objective(
    state: &PretrainState,
    config: &PretrainConfig,
    batch: &PretrainBatch,
    keys: &BatchKeys,
) -> Result<(StepStats, ParamSet)> {
    let slot: HashMap<(usize, usize), usize> = keys.order.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let lambda = config.lambda_weight;
    let tau = config.temperature;
    let include = config.include_positive_in_denominator;
    let per_item: Vec<(StepStats, ParamSet)> = batch
        .items
        .par_iter()
        .map(|item| {
            let group_keys = &keys.keys[slot[&(item.group, item.rotation)]];
            let (p1, p2) = (&group_keys[item.d1], &group_keys[item.d2]);
            let (anchor, cache) = state.query.forward(&item.anchor)?;
            let mut grad = vec![0.0; anchor.dim()];
            let mut ld = 0.0;
            let mut lc = 0.0;
            if lambda > 0.0 {
                let negs: Vec<&Feature> = item.negatives(group_keys.len()).map(|d| &group_keys[d]).collect();
                let l = distortion_loss_with(&anchor, p1, p2, &negs, item.r, tau, include)?;
                ld = l.value;
                grad.iter_mut().zip(&l.grad_anchor).for_each(|(g, v)| *g += lambda * v);
            }
            if lambda < 1.0 {
                let l = content_loss_with(&anchor, p1, p2, &state.queue, item.content_id, item.r, tau, include)?;
                lc = l.value;
                grad.iter_mut().zip(&l.grad_anchor).for_each(|(g, v)| *g += (1.0 - lambda) * v);
            }
            let mut grads = state.query.params.zeros_like();
            state.query.backward(&cache, &grad, &mut grads);
            let stats = StepStats {
                loss: pretrain_loss(ld, lc, lambda),
                distortion_loss: ld,
                content_loss: lc,
            };
            Ok((stats, grads))
        })
        .collect::<Result<_>>()?;

    let n = per_item.len() as f64;
    let mut total = state.query.params.zeros_like();
    let mut stats = StepStats { loss: 0.0, distortion_loss: 0.0, content_loss: 0.0 };
    for (s, g) in &per_item {
        total.add_assign(g);
        stats.loss += s.loss / n;
        stats.distortion_loss += s.distortion_loss / n;
        stats.content_loss += s.content_loss / n;
    }
    total.scale(1.0 / n);
    Ok((stats, total))
}

/// Encodes keys, enqueues them, then takes one SGD step on the query
/// encoder and a momentum step on the key encoder. Keys enter the queue
/// before the content-wise term is evaluated so the first step already has
/// other-content negatives; the content filter keeps the anchor's own
/// content out of that denominator.
pub fn pretrain_step(
    state: &mut PretrainState,
    data: &PretrainData,
    config: &PretrainConfig,
    batch: &PretrainBatch,
    lr: f64,
) -> Result<StepStats> {
    let keys = encode_keys(state, data, batch)?;
    enqueue_keys(state, data, &keys)?;
    let (stats, total) = batch_objective(state, config, batch, &keys)?;
    if !stats.loss.is_finite() || !total.all_finite() {
        return Err(Error::Divergence(format!(
            "non-finite pre-training loss {} at step {}",
            stats.loss, state.step
        )));
    }
    state.optimizer.step(&mut state.query.params, &total, lr);
    momentum_update(&mut state.key.params, &state.query.params, config.momentum)?;
    state.step += 1;
    Ok(stats)
}

/// `ceil(renders / batch_size)` steps, each on a freshly sampled batch,
/// at the learning rate scheduled for the current epoch.
pub fn pretrain_epoch(
    state: &mut PretrainState,
    data: &PretrainData,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainMetrics> {
    let steps = data.num_renders().div_ceil(config.batch_size);
    let lr = config.schedule().at_epoch(state.epoch as usize);
    let mut sums = StepStats { loss: 0.0, distortion_loss: 0.0, content_loss: 0.0 };
    for s in 0..steps {
        let batch = sample_batch(data, config, derive_seed(seed, &[state.epoch, s as u64]))?;
        let st = pretrain_step(state, data, config, &batch, lr)?;
        sums.loss += st.loss;
        sums.distortion_loss += st.distortion_loss;
        sums.content_loss += st.content_loss;
    }
    state.epoch += 1;
    let n = steps as f64;
    Ok(PretrainMetrics {
        epoch: state.epoch,
        steps,
        lr,
        mean_loss: sums.loss / n,
        mean_distortion_loss: sums.distortion_loss / n,
        mean_content_loss: sums.content_loss / n,
        queue_len: state.queue.len(),
    })
}
