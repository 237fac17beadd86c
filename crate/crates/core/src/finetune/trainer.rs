use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{FinetuneModel, FinetuneSample};
use super::FinetuneConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, Optimizer};
use crate::rng::{derive_seed, rng_from};

/// One Adam state per trainable group, all stepped together.
#[derive(Debug, Clone)]
pub struct FinetuneOptimizer {
    pub groups: Vec<Adam>,
}

impl FinetuneOptimizer {
    pub fn new(model: &mut FinetuneModel, weight_decay: f64) -> Self {
        FinetuneOptimizer {
            groups: model.trainable_mut().iter().map(|p| Adam::new(p, weight_decay)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMetrics {
    pub epoch: u64,
    pub steps: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub mean_mse: f64,
    pub mean_rank: f64,
}

/// Splits a shuffled order into batches of `size`; a trailing singleton is
/// merged into the previous batch because the rank term needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

pub fn finetune_epoch(
    model: &mut FinetuneModel,
    optimizer: &mut FinetuneOptimizer,
    samples: &[FinetuneSample],
    config: &FinetuneConfig,
    seed: u64,
    epoch: u64,
) -> Result<FinetuneMetrics> {
    if samples.len() < 2 {
        return Err(Error::Dataset(format!(
            "fine-tuning needs at least 2 labelled samples, got {}",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng_from(derive_seed(seed, &[epoch])));
    let lr = config.schedule().at_epoch(epoch as usize);
    let plan = batches(&order, config.batch_size);
    let (mut loss, mut mse, mut rank) = (0.0, 0.0, 0.0);
    for (step, idx) in plan.iter().enumerate() {
        let batch: Vec<&FinetuneSample> = idx.iter().map(|&i| &samples[i]).collect();
        let out = model.batch_loss(&batch, config.alpha)?;
        if !out.loss.is_finite() || !out.grads.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite fine-tuning loss {} at epoch {epoch}, step {step}",
                out.loss
            )));
        }
        for ((params, grads), opt) in model
            .trainable_mut()
            .into_iter()
            .zip(out.grads.groups())
            .zip(optimizer.groups.iter_mut())
        {
            opt.step(params, grads, lr);
        }
        loss += out.loss;
        mse += out.mse;
        rank += out.rank;
    }
    let n = plan.len() as f64;
    Ok(FinetuneMetrics {
        epoch: epoch + 1,
        steps: plan.len(),
        lr,
        mean_loss: loss / n,
        mean_mse: mse / n,
        mean_rank: rank / n,
    })
}
