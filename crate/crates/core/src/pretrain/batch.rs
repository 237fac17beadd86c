use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::PretrainConfig;
use crate::anchor::{masking_ratio, mix, sample_mask};
use crate::error::{Error, Result};
use crate::pointcloud::{load_ply, DatasetManifest, PointCloud};
use crate::render::{random_rotation, ImageSource, ProjectedImage, RenderCache, RenderConfig, Rotation};
use crate::rng::{derive_seed, rng_from};

/// All pre-training renders of one reference content.
#[derive(Debug, Clone)]
pub struct ContentRenders {
    pub content_id: u32,
    /// `renders[rotation][d]`; `d` indexes this content's distortions and is
    /// stored as the image's `distortion_id`.
    pub renders: Vec<Vec<ProjectedImage>>,
}

impl ContentRenders {
    pub fn distortions(&self) -> usize {
        self.renders.first().map_or(0, Vec::len)
    }

    pub fn rotations(&self) -> usize {
        self.renders.len()
    }
}

#[derive(Debug, Clone)]
pub struct PretrainData {
    pub groups: Vec<ContentRenders>,
}

/// Rotation shared by every distortion of `content_id` at index `rotation`.
pub fn content_rotation(seed: u64, content_id: u32, rotation: usize) -> Rotation {
    random_rotation(derive_seed(seed, &[content_id as u64, rotation as u64]))
}

impl PretrainData {
    pub fn new(groups: Vec<ContentRenders>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::Dataset(format!(
                "pre-training needs at least 2 contents, got {}",
                groups.len()
            )));
        }
        let shape = groups[0].renders.first().and_then(|r| r.first()).map(|i| (i.height, i.width));
        for g in &groups {
            if g.rotations() == 0 || g.distortions() < 3 {
                return Err(Error::Dataset(format!(
                    "content {} needs at least 3 distortions (found {}) and one rotation",
                    g.content_id,
                    g.distortions()
                )));
            }
            if g.renders.iter().any(|r| r.len() != g.distortions()) {
                return Err(Error::Dataset(format!(
                    "content {} has a different distortion count per rotation",
                    g.content_id
                )));
            }
            if g.renders.iter().flatten().any(|i| Some((i.height, i.width)) != shape) {
                return Err(Error::Dataset("pre-training renders must share one size".into()));
            }
        }
        Ok(PretrainData { groups })
    }

    /// Renders `(content_id, cloud)` pairs; clouds of one content are kept
    /// in the given order as its distortion index.
    pub fn render_clouds(
        clouds: &[(u32, PointCloud)],
        render: &RenderConfig,
        rotations: usize,
        seed: u64,
        cache: &mut RenderCache,
    ) -> Result<Self> {
        let mut by_content: BTreeMap<u32, Vec<&PointCloud>> = BTreeMap::new();
        for (c, cloud) in clouds {
            by_content.entry(*c).or_default().push(cloud);
        }
        let mut jobs = Vec::new();
        for (&c, members) in &by_content {
            for r in 0..rotations {
                let rot = content_rotation(seed, c, r);
                jobs.extend(members.iter().map(|cloud| (*cloud, rot)));
            }
        }
        let mut images = cache.get_or_render_many(&jobs, render)?.into_iter();
        let mut groups = Vec::with_capacity(by_content.len());
        for (&c, members) in &by_content {
            let renders = (0..rotations)
                .map(|_| {
                    (0..members.len())
                        .map(|d| {
                            let mut img = images.next().expect("one image per job");
                            img.source = ImageSource {
                                content_id: c,
                                distortion_id: d as u32,
                                mixed_with: None,
                            };
                            img
                        })
                        .collect()
                })
                .collect();
            groups.push(ContentRenders { content_id: c, renders });
        }
        Self::new(groups)
    }

    /// Loads every manifest row (paths relative to `base`) and renders it.
    /// Rows of one content are ordered by `(distortion_id, level)`.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        base: &Path,
        render: &RenderConfig,
        rotations: usize,
        seed: u64,
        cache: &mut RenderCache,
    ) -> Result<Self> {
        let mut entries: Vec<_> = manifest.resolved(base).entries;
        entries.sort_by_key(|e| e.key());
        let clouds: Vec<(u32, PointCloud)> = entries
            .par_iter()
            .map(|e| Ok((e.content_id, load_ply(&e.path)?)))
            .collect::<Result<_>>()?;
        Self::render_clouds(&clouds, render, rotations, seed, cache)
    }

    /// Total number of `(sample, rotation)` renders.
    pub fn num_renders(&self) -> usize {
        self.groups.iter().map(|g| g.rotations() * g.distortions()).sum()
    }

    pub fn image(&self, group: usize, rotation: usize, d: usize) -> &ProjectedImage {
        &self.groups[group].renders[rotation][d]
    }
}

/// One anchor and the indices of its positives within its group.
#[derive(Debug, Clone)]
pub struct PretrainItem {
    pub group: usize,
    pub content_id: u32,
    pub rotation: usize,
    pub d1: usize,
    pub d2: usize,
    /// Fraction of anchor pixels taken from `d1`.
    pub r: f64,
    pub anchor: ProjectedImage,
}

impl PretrainItem {
    /// Distortion indices of the same-content negatives.
    pub fn negatives(&self, distortions: usize) -> impl Iterator<Item = usize> + '_ {
        (0..distortions).filter(move |&d| d != self.d1 && d != self.d2)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainBatch {
    pub items: Vec<PretrainItem>,
}

/// Builds `config.batch_size` anchors. Contents cycle through a shuffled
/// order so every batch spans at least two contents; rotation, the
/// unordered distortion pair, its orientation and the mask are drawn
/// uniformly per item.
pub fn sample_batch(data: &PretrainData, config: &PretrainConfig, step_seed: u64) -> Result<PretrainBatch> {
    let mut order: Vec<usize> = (0..data.groups.len()).collect();
    order.shuffle(&mut rng_from(derive_seed(step_seed, &[0])));
    let items = (0..config.batch_size)
        .into_par_iter()
        .map(|i| {
            let group = order[i % order.len()];
            let g = &data.groups[group];
            let mut rng = rng_from(derive_seed(step_seed, &[1, i as u64]));
            let rotation = rng.random_range(0..g.rotations());
            let d = g.distortions();
            let (mut d1, mut d2) = unordered_pair(rng.random_range(0..d * (d - 1) / 2), d);
            if rng.random_bool(0.5) {
                std::mem::swap(&mut d1, &mut d2);
            }
            let x1 = &g.renders[rotation][d1];
            let x2 = &g.renders[rotation][d2];
            let mask = sample_mask(
                x1.height,
                x1.width,
                config.mask_ratio_min,
                config.mask_ratio_max,
                rng.random(),
            )?;
            Ok(PretrainItem {
                group,
                content_id: g.content_id,
                rotation,
                d1,
                d2,
                r: masking_ratio(&mask),
                anchor: mix(x1, x2, &mask)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PretrainBatch { items })
}

/// The `k`-th pair `(a, b)`, `a < b < n`, in lexicographic order.
fn unordered_pair(mut k: usize, n: usize) -> (usize, usize) {
    for a in 0..n {
        let row = n - 1 - a;
        if k < row {
            return (a, a + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair index out of range")
}
