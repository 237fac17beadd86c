use std::f64::consts::TAU;

use rand::Rng;

use crate::error::Result;
use crate::pointcloud::PointCloud;
use crate::rng::rng_from;

/// Translates the centroid to the origin and scales the farthest point to
/// radius 1. Coincident points (including a single point) map to the origin.
pub fn normalize_to_unit_ball(cloud: &PointCloud) -> Result<PointCloud> {
    cloud.ensure_non_empty()?;
    let c = cloud.centroid();
    let centered: Vec<[f64; 3]> = cloud
        .positions()
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let radius = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    let positions = centered.into_iter().map(|p| p.map(|v| v * scale)).collect();
    Ok(cloud.with_positions(positions))
}

/// Proper rotation stored as a row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub matrix: [[f64; 3]; 3],
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// From a unit quaternion `(w, x, y, z)`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        Rotation {
            matrix: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ],
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.matrix
            .iter()
            .flatten()
            .flat_map(|v| v.to_bits().to_le_bytes())
            .collect()
    }
}

/// Rotation drawn uniformly from SO(3) with Shoemake's unit-quaternion method.
pub fn random_rotation(seed: u64) -> Rotation {
    let mut rng = rng_from(seed);
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y) = (a * (TAU * u2).sin(), a * (TAU * u2).cos());
    let (z, w) = (b * (TAU * u3).sin(), b * (TAU * u3).cos());
    Rotation::from_quaternion(w, x, y, z)
}

/// Rotates every point about the world origin.
pub fn rotate(cloud: &PointCloud, rotation: &Rotation) -> PointCloud {
    cloud.with_positions(cloud.positions().iter().map(|p| rotation.apply(p)).collect())
}
