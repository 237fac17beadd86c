use std::collections::VecDeque;

use crate::encoders::Feature;
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

const UNIT_TOLERANCE: f64 = 1e-6;

/// Bounded FIFO of key features tagged with their content id.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    entries: VecDeque<(Feature, u32)>,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("queue capacity must be positive".into()));
        }
        Ok(NegativeQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends at the tail, evicting from the head beyond capacity.
    pub fn enqueue(&mut self, feature: Feature, content_id: u32) -> Result<()> {
        if !feature.normalized || !feature.is_unit(UNIT_TOLERANCE) {
            return Err(Error::Usage(format!(
                "queue accepts unit features only, got norm {}",
                feature.norm()
            )));
        }
        if let Some((first, _)) = self.entries.front() {
            if first.dim() != feature.dim() {
                return Err(Error::Shape(format!(
                    "queue holds {}-dim features, got {}",
                    first.dim(),
                    feature.dim()
                )));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((feature, content_id));
        Ok(())
    }

    pub fn enqueue_batch(&mut self, batch: impl IntoIterator<Item = (Feature, u32)>) -> Result<()> {
        for (f, c) in batch {
            self.enqueue(f, c)?;
        }
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (&Feature, u32)> {
        self.entries.iter().map(|(f, c)| (f, *c))
    }

    /// Entries whose content differs from `content_id`, oldest first.
    pub fn eligible(&self, content_id: u32) -> Vec<&Feature> {
        self.entries
            .iter()
            .filter(|(_, c)| *c != content_id)
            .map(|(f, _)| f)
            .collect()
    }

    /// `features` as `[len, dim]` and `content_ids` as `[len]`.
    pub fn to_params(&self) -> ParamSet {
        let dim = self.entries.front().map_or(0, |(f, _)| f.dim());
        let mut feats = Vec::with_capacity(self.len() * dim);
        let mut ids = Vec::with_capacity(self.len());
        for (f, c) in &self.entries {
            feats.extend_from_slice(&f.values);
            ids.push(*c as f64);
        }
        let mut p = ParamSet::new();
        p.push("features", Tensor::from_vec(&[self.len(), dim], feats).expect("sized"));
        p.push("content_ids", Tensor::from_vec(&[self.len()], ids).expect("sized"));
        p
    }

    pub fn from_params(capacity: usize, params: &ParamSet) -> Result<Self> {
        let missing = |n: &str| Error::Checkpoint(format!("queue section lacks `{n}`"));
        let feats = params.by_name("features").ok_or_else(|| missing("features"))?;
        let ids = params.by_name("content_ids").ok_or_else(|| missing("content_ids"))?;
        if feats.shape.len() != 2 || ids.shape != [feats.shape[0]] {
            return Err(Error::Checkpoint("queue arrays have inconsistent shapes".into()));
        }
        let mut q = NegativeQueue::new(capacity)?;
        let dim = feats.shape[1];
        for (i, &c) in ids.data.iter().enumerate() {
            let values = feats.data[i * dim..(i + 1) * dim].to_vec();
            q.enqueue(Feature { values, normalized: true }, c as u32)?;
        }
        Ok(q)
    }
}
