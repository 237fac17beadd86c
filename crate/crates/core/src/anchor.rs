//! Block-structured binary masks and patch-mixed anchor images.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::render::{ImageSource, ProjectedImage};
use crate::rng::rng_from;

/// Side length of one mask block, in pixels.
pub const PATCH_SIZE: usize = 16;

/// Binary mask over a grid of `PATCH_SIZE × PATCH_SIZE` blocks. A set block
/// takes its pixels from the first parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    rows: usize,
    cols: usize,
    blocks: Vec<bool>,
}

impl PatchMask {
    pub fn from_blocks(rows: usize, cols: usize, blocks: Vec<bool>) -> Result<Self> {
        if blocks.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} mask needs {} blocks, got {}",
                rows * cols,
                blocks.len()
            )));
        }
        Ok(PatchMask { rows, cols, blocks })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        let (rows, cols) = block_grid(height, width)?;
        Ok(PatchMask {
            rows,
            cols,
            blocks: vec![value; rows * cols],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn patch_size(&self) -> usize {
        PATCH_SIZE
    }

    pub fn block(&self, row: usize, col: usize) -> bool {
        self.blocks[row * self.cols + col]
    }

    pub fn ones(&self) -> usize {
        self.blocks.iter().filter(|&&b| b).count()
    }

    pub fn total_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Value at pixel `(row, col)`.
    pub fn at_pixel(&self, row: usize, col: usize) -> bool {
        self.block(row / PATCH_SIZE, col / PATCH_SIZE)
    }

    /// Complementary mask.
    pub fn inverted(&self) -> PatchMask {
        PatchMask {
            rows: self.rows,
            cols: self.cols,
            blocks: self.blocks.iter().map(|b| !b).collect(),
        }
    }
}

fn block_grid(height: usize, width: usize) -> Result<(usize, usize)> {
    if height == 0 || width == 0 || height % PATCH_SIZE != 0 || width % PATCH_SIZE != 0 {
        return Err(Error::Shape(format!(
            "image size {height}x{width} is not a positive multiple of {PATCH_SIZE}"
        )));
    }
    Ok((height / PATCH_SIZE, width / PATCH_SIZE))
}

/// Fraction of pixels drawn from the first parent; equals the 1-block fraction.
pub fn masking_ratio(mask: &PatchMask) -> f64 {
    mask.ones() as f64 / mask.total_blocks() as f64
}

/// Draws a block count uniformly from the integers whose ratio lies in
/// `[r_min, r_max]`, then places that many blocks uniformly without
/// replacement.
pub fn sample_mask(height: usize, width: usize, r_min: f64, r_max: f64, seed: u64) -> Result<PatchMask> {
    let (rows, cols) = block_grid(height, width)?;
    if !(0.0..=1.0).contains(&r_min) || !(0.0..=1.0).contains(&r_max) || r_min > r_max {
        return Err(Error::Config(format!(
            "mask ratio bounds must satisfy 0 <= r_min <= r_max <= 1, got [{r_min}, {r_max}]"
        )));
    }
    let total = rows * cols;
    let lo = (r_min * total as f64 - 1e-9).ceil().max(0.0) as usize;
    let hi = ((r_max * total as f64 + 1e-9).floor() as usize).min(total);
    if lo > hi {
        return Err(Error::Config(format!(
            "no block count out of {total} gives a ratio in [{r_min}, {r_max}]"
        )));
    }
    let mut rng = rng_from(seed);
    let count = rng.random_range(lo..=hi);
    let mut blocks = vec![false; total];
    for i in index::sample(&mut rng, total, count) {
        blocks[i] = true;
    }
    Ok(PatchMask { rows, cols, blocks })
}

/// `mask ⊙ x1 + (1 − mask) ⊙ x2` without any provenance checks.
pub fn blend(x1: &ProjectedImage, x2: &ProjectedImage, mask: &PatchMask) -> Result<ProjectedImage> {
    if !x1.same_shape(x2) {
        return Err(Error::Shape(format!(
            "parents differ in shape: {}x{} vs {}x{}",
            x1.height, x1.width, x2.height, x2.width
        )));
    }
    if mask.rows * PATCH_SIZE != x1.height || mask.cols * PATCH_SIZE != x1.width {
        return Err(Error::Shape(format!(
            "{}x{} block mask does not cover a {}x{} image",
            mask.rows, mask.cols, x1.height, x1.width
        )));
    }
    let c = x1.channels;
    let row_len = x1.width * c;
    let block_len = PATCH_SIZE * c;
    let mut pixels = Vec::with_capacity(x1.pixels.len());
    for row in 0..x1.height {
        let start = row * row_len;
        for bc in 0..mask.cols {
            let s = start + bc * block_len;
            let src = if mask.block(row / PATCH_SIZE, bc) { x1 } else { x2 };
            pixels.extend_from_slice(&src.pixels[s..s + block_len]);
        }
    }
    Ok(ProjectedImage {
        height: x1.height,
        width: x1.width,
        channels: c,
        pixels,
        view_id: x1.view_id,
        source: x1.source,
    })
}

/// Builds an anchor from two renders of one content under different
/// distortions. The result records both distortion ids.
pub fn mix(x1: &ProjectedImage, x2: &ProjectedImage, mask: &PatchMask) -> Result<ProjectedImage> {
    if x1.source.content_id != x2.source.content_id {
        return Err(Error::Usage(format!(
            "anchor parents must share content, got {} and {}",
            x1.source.content_id, x2.source.content_id
        )));
    }
    if x1.source.distortion_id == x2.source.distortion_id {
        return Err(Error::Usage(format!(
            "anchor parents must carry different distortions, both are {}",
            x1.source.distortion_id
        )));
    }
    let mut out = blend(x1, x2, mask)?;
    out.source = ImageSource {
        content_id: x1.source.content_id,
        distortion_id: x1.source.distortion_id,
        mixed_with: Some(x2.source.distortion_id),
    };
    Ok(out)
}
