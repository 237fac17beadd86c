//! Procedural reference clouds for synthetic datasets and tests.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use super::PointCloud;
use crate::rng::{derive_seed, rng_from};

/// Uniform samples on the unit sphere with a constant mid-gray color.
pub fn sphere_surface(n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_from(seed);
    let positions: Vec<[f64; 3]> = (0..n).map(|_| unit_vector(&mut rng)).collect();
    PointCloud::new(positions, vec![[0.5; 3]; n]).expect("valid sphere")
}

fn unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

const SHAPES: usize = 6;
const TEXTURES: usize = 4;

/// A textured reference cloud. Different `index` values give different
/// (shape, texture, palette) combinations.
pub fn reference_content(index: usize, n: usize, seed: u64) -> PointCloud {
    let mut rng = rng_from(derive_seed(seed, &[index as u64]));
    let shape = index % SHAPES;
    let texture = (index / SHAPES + index) % TEXTURES;
    let hue = (index as f64 * 0.618_033_988_75).fract();
    let base = hsv(hue, 0.65, 0.85);
    let accent = hsv((hue + 0.5).fract(), 0.8, 0.35);
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, (u, v)) = sample_shape(shape, &mut rng);
        let t = texture_weight(texture, u, v, &p);
        positions.push(p);
        colors.push([0, 1, 2].map(|k| base[k] * (1.0 - t) + accent[k] * t));
    }
    PointCloud::new(positions, colors).expect("valid reference")
}

/// Returns a surface point and its surface parameters in [0,1)².
fn sample_shape<R: Rng>(shape: usize, rng: &mut R) -> ([f64; 3], (f64, f64)) {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    match shape {
        0 => {
            // Ellipsoid.
            let d = unit_vector(rng);
            ([d[0] * 1.2, d[1] * 0.8, d[2] * 0.6], uv_of(&d))
        }
        1 => {
            // Torus.
            let (a, b) = (u * TAU, v * TAU);
            let (big, small) = (1.0, 0.35);
            (
                [(big + small * b.cos()) * a.cos(), small * b.sin(), (big + small * b.cos()) * a.sin()],
                (u, v),
            )
        }
        2 => {
            // Cube surface.
            let face = rng.random_range(0..6);
            let (s, t) = (u * 2.0 - 1.0, v * 2.0 - 1.0);
            let p = match face {
                0 => [1.0, s, t],
                1 => [-1.0, s, t],
                2 => [s, 1.0, t],
                3 => [s, -1.0, t],
                4 => [s, t, 1.0],
                _ => [s, t, -1.0],
            };
            (p, ((u + face as f64) / 6.0, v))
        }
        3 => {
            // Capped cylinder.
            let a = u * TAU;
            if rng.random_bool(0.75) {
                ([0.6 * a.cos(), v * 2.0 - 1.0, 0.6 * a.sin()], (u, v))
            } else {
                let rr = 0.6 * v.sqrt();
                let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                ([rr * a.cos(), y, rr * a.sin()], (u, v))
            }
        }
        4 => {
            // Bumpy sphere.
            let d = unit_vector(rng);
            let (uu, vv) = uv_of(&d);
            let r = 1.0 + 0.15 * (5.0 * uu * TAU).sin() * (4.0 * vv * PI).sin();
            (d.map(|x| x * r), (uu, vv))
        }
        _ => {
            // Saddle patch.
            let (x, z) = (u * 2.0 - 1.0, v * 2.0 - 1.0);
            ([x, 0.5 * (x * x - z * z), z], (u, v))
        }
    }
}

fn uv_of(d: &[f64; 3]) -> (f64, f64) {
    let u = (d[2].atan2(d[0]) / TAU).rem_euclid(1.0);
    let v = d[1].clamp(-1.0, 1.0).acos() / PI;
    (u, v)
}

fn texture_weight(texture: usize, u: f64, v: f64, p: &[f64; 3]) -> f64 {
    match texture {
        0 => ((u * 8.0).floor() as i64 % 2) as f64,
        1 => (((u * 6.0).floor() + (v * 6.0).floor()) as i64 % 2) as f64,
        2 => (p[1] * 0.5 + 0.5).clamp(0.0, 1.0),
        _ => 0.5 + 0.5 * (v * 10.0 * PI).sin(),
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
