//! Content-addressed render cache, in memory and optionally on disk.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{normalize_to_unit_ball, render, rotate, ProjectedImage, RenderConfig, Rotation};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Hex sha256 over the cloud bytes, the rotation matrix and the render
/// configuration.
pub fn render_key(cloud: &PointCloud, rotation: &Rotation, config: &RenderConfig) -> String {
    let mut h = Sha256::new();
    h.update(cloud.content_bytes());
    h.update(rotation.to_bytes());
    h.update(serde_json::to_vec(config).expect("render config serializes"));
    hex::encode(h.finalize())
}

/// Normalizes, rotates, then renders from the default +z camera.
pub fn render_rotated(cloud: &PointCloud, rotation: &Rotation, config: &RenderConfig) -> Result<ProjectedImage> {
    let normalized = normalize_to_unit_ball(cloud)?;
    render(&rotate(&normalized, rotation), config)
}

#[derive(Debug, Default)]
pub struct RenderCache {
    dir: Option<PathBuf>,
    memory: HashMap<String, ProjectedImage>,
    pub hits: usize,
    pub misses: usize,
}

impl RenderCache {
    pub fn in_memory() -> Self {
        RenderCache::default()
    }

    /// Files are named `<key>.bin`: u64 height, width, channels followed by
    /// the HWC pixels as f64, all little-endian.
    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RenderCache {
            dir: Some(dir),
            ..RenderCache::default()
        })
    }

    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }

    pub fn get_or_render(
        &mut self,
        cloud: &PointCloud,
        rotation: &Rotation,
        config: &RenderConfig,
    ) -> Result<ProjectedImage> {
        let key = render_key(cloud, rotation, config);
        if let Some(img) = self.memory.get(&key) {
            self.hits += 1;
            return Ok(img.clone());
        }
        if let Some(img) = self.read_disk(&key)? {
            self.hits += 1;
            self.memory.insert(key, img.clone());
            return Ok(img);
        }
        self.misses += 1;
        let img = render_rotated(cloud, rotation, config)?;
        self.write_disk(&key, &img)?;
        self.memory.insert(key, img.clone());
        Ok(img)
    }

    /// Batch form of [`Self::get_or_render`]; misses are rendered in
    /// parallel and results come back in job order.
    pub fn get_or_render_many(
        &mut self,
        jobs: &[(&PointCloud, Rotation)],
        config: &RenderConfig,
    ) -> Result<Vec<ProjectedImage>> {
        let keys: Vec<String> = jobs.par_iter().map(|(c, r)| render_key(c, r, config)).collect();
        let mut out: Vec<Option<ProjectedImage>> = Vec::with_capacity(jobs.len());
        for key in &keys {
            let found = match self.memory.get(key) {
                Some(img) => Some(img.clone()),
                None => self.read_disk(key)?,
            };
            out.push(found);
        }
        let missing: Vec<usize> = (0..jobs.len()).filter(|&i| out[i].is_none()).collect();
        let rendered: Vec<ProjectedImage> = missing
            .par_iter()
            .map(|&i| render_rotated(jobs[i].0, &jobs[i].1, config))
            .collect::<Result<_>>()?;
        self.misses += missing.len();
        self.hits += jobs.len() - missing.len();
        for (i, img) in missing.into_iter().zip(rendered) {
            self.write_disk(&keys[i], &img)?;
            out[i] = Some(img);
        }
        for (key, img) in keys.into_iter().zip(&out) {
            self.memory
                .entry(key)
                .or_insert_with(|| img.clone().expect("filled"));
        }
        Ok(out.into_iter().map(|o| o.expect("filled")).collect())
    }

    fn read_disk(&self, key: &str) -> Result<Option<ProjectedImage>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(format!("{key}.bin"));
        let Ok(bytes) = fs::read(&path) else { return Ok(None) };
        let corrupt = || Error::Format {
            path: path.clone(),
            line: 0,
            message: "corrupt render cache entry".into(),
        };
        let mut r = bytes.as_slice();
        let mut dims = [0u64; 3];
        r.read_u64_into::<LittleEndian>(&mut dims).map_err(|_| corrupt())?;
        let n = (dims[0] * dims[1] * dims[2]) as usize;
        if r.len() != 8 * n || dims[2] != 3 {
            return Err(corrupt());
        }
        let mut pixels = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut pixels).map_err(|_| corrupt())?;
        Ok(Some(ProjectedImage::from_pixels(dims[0] as usize, dims[1] as usize, pixels)?))
    }

    fn write_disk(&self, key: &str, img: &ProjectedImage) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(format!("{key}.bin"));
        let mut buf = Vec::with_capacity(24 + 8 * img.pixels.len());
        for d in [img.height, img.width, img.channels] {
            buf.write_u64::<LittleEndian>(d as u64).expect("vec write");
        }
        for &p in &img.pixels {
            buf.write_f64::<LittleEndian>(p).expect("vec write");
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
