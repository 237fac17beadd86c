//! Normalization, rotation, point-splat rasterization and view stitching.

mod cache;
mod png_io;
mod raster;
mod transform;

pub use cache::{render_key, render_rotated, RenderCache};
pub use png_io::{load_png, save_png};
pub use raster::{render, render_from, render_six_views, stitch_views, CameraPose, VIEW_AXES};
pub use transform::{normalize_to_unit_ball, random_rotation, rotate, Rotation};

use serde::{Deserialize, Serialize};

use crate::anchor::PATCH_SIZE;
use crate::error::{Error, Result};

/// Rasterization settings shared by pre-training and fine-tuning renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Distance from the origin to the camera, in unit-ball radii.
    pub camera_distance: f64,
    /// Horizontal field of view in degrees.
    pub field_of_view: f64,
    /// Disc radius in pixels; 0 paints a single pixel.
    pub splat_radius: u32,
    pub background_color: [f64; 3],
}

/// Field of view (degrees) at which the unit ball seen from `distance`
/// spans `fill` of the frame width.
pub fn fov_for_fill(distance: f64, fill: f64) -> f64 {
    let silhouette = (1.0 / distance).asin().tan();
    2.0 * (silhouette / fill).atan().to_degrees()
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            height: 512,
            width: 512,
            channels: 3,
            camera_distance: 3.0,
            field_of_view: fov_for_fill(3.0, 0.9),
            splat_radius: 1,
            background_color: [1.0; 3],
        }
    }
}

impl RenderConfig {
    /// Same camera and splatting, different resolution.
    pub fn with_size(&self, height: usize, width: usize) -> Self {
        RenderConfig {
            height,
            width,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("render height and width must be positive".into()));
        }
        if self.height % PATCH_SIZE != 0 || self.width % PATCH_SIZE != 0 {
            return Err(Error::Config(format!(
                "render size {}x{} must be divisible by the patch size {PATCH_SIZE}",
                self.height, self.width
            )));
        }
        if self.channels != 3 {
            return Err(Error::Config("only 3-channel rendering is supported".into()));
        }
        if !(self.camera_distance > 1.0) {
            return Err(Error::Config("camera_distance must exceed 1 (camera outside the unit ball)".into()));
        }
        if !(self.field_of_view > 0.0 && self.field_of_view < 180.0) {
            return Err(Error::Config("field_of_view must lie in (0, 180) degrees".into()));
        }
        if self.background_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background_color channels must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn focal_length_px(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.field_of_view.to_radians() / 2.0).tan()
    }
}

/// Where an image came from. Anchors carry a second distortion id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImageSource {
    pub content_id: u32,
    pub distortion_id: u32,
    pub mixed_with: Option<u32>,
}

/// An `H×W×C` image with channel values in `[0,1]`, stored row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub view_id: u8,
    pub source: ImageSource,
}

impl ProjectedImage {
    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&color);
        }
        ProjectedImage {
            height,
            width,
            channels: 3,
            pixels,
            view_id: 0,
            source: ImageSource::default(),
        }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("pixel values must lie in [0,1]".into()));
        }
        Ok(ProjectedImage {
            height,
            width,
            channels: 3,
            pixels,
            view_id: 0,
            source: ImageSource::default(),
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * self.channels;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * self.channels;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &ProjectedImage) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Copies the `h×w` block whose top-left pixel is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<ProjectedImage> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w * 3);
        for r in row..row + h {
            let start = (r * self.width + col) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Ok(ProjectedImage {
            height: h,
            width: w,
            channels: 3,
            pixels,
            view_id: self.view_id,
            source: self.source,
        })
    }

    pub fn mean_abs_diff(&self, other: &ProjectedImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.pixels.len() as f64
    }
}
