//! Point clouds, PLY and manifest I/O, and synthetic distortions.

mod distort;
mod manifest;
mod ply;
pub mod shapes;

pub use distort::{synth_distort, synth_distort_with, DistortionKind, DistortionSchedule, DistortionSpec, MAX_LEVEL};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, ManifestEntry, MANIFEST_HEADER};
pub use ply::{load_ply, save_ply};

use crate::error::{Error, Result};

/// Positions and per-point RGB colors of one point set.
///
/// Colors live in `[0,1]` internally; 8-bit values appear only at file
/// boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
}

impl PointCloud {
    /// Builds a cloud, rejecting mismatched lengths, non-finite positions
    /// and colors outside `[0,1]`.
    pub fn new(positions: Vec<[f64; 3]>, colors: Vec<[f64; 3]>) -> Result<Self> {
        if positions.len() != colors.len() {
            return Err(Error::Shape(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            )));
        }
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Validation(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::Validation(format!("point {i} has a color outside [0,1]")));
        }
        Ok(PointCloud { positions, colors })
    }

    /// Like [`PointCloud::new`] but additionally rejects empty clouds.
    pub fn non_empty(positions: Vec<[f64; 3]>, colors: Vec<[f64; 3]>) -> Result<Self> {
        let cloud = Self::new(positions, colors)?;
        cloud.ensure_non_empty()?;
        Ok(cloud)
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn point_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.positions.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Largest distance from the centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.positions
            .iter()
            .map(|p| dist(p, &c))
            .fold(0.0, f64::max)
    }

    /// Replaces positions, keeping colors. Lengths must match.
    pub(crate) fn with_positions(&self, positions: Vec<[f64; 3]>) -> Self {
        debug_assert_eq!(positions.len(), self.colors.len());
        PointCloud {
            positions,
            colors: self.colors.clone(),
        }
    }

    pub fn into_parts(self) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        (self.positions, self.colors)
    }

    /// Bytes that identify this cloud exactly (used for cache keys).
    pub fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.positions.len() * 48);
        for (p, c) in self.positions.iter().zip(&self.colors) {
            for v in p.iter().chain(c) {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
