//! Parametric distortions used to build (content × distortion × level) groups.
//!
//! Magnitudes are expressed relative to the cloud's radius (largest distance
//! from the centroid), so the same schedule applies to clouds of any scale.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const MAX_LEVEL: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    GaussianGeometryNoise,
    ColorNoise,
    Downsample,
    Quantize,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::GaussianGeometryNoise,
        DistortionKind::ColorNoise,
        DistortionKind::Downsample,
        DistortionKind::Quantize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::GaussianGeometryNoise => "gaussian_geometry_noise",
            DistortionKind::ColorNoise => "color_noise",
            DistortionKind::Downsample => "downsample",
            DistortionKind::Quantize => "quantize",
        }
    }

    /// Stable numeric id written to manifests.
    pub fn id(self) -> u32 {
        match self {
            DistortionKind::GaussianGeometryNoise => 1,
            DistortionKind::ColorNoise => 2,
            DistortionKind::Downsample => 3,
            DistortionKind::Quantize => 4,
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown distortion kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: u8,
    pub seed: u64,
}

/// Severity schedules. Noise sigmas grow geometrically, keep-fractions fall
/// linearly from `keep_fraction_max` (level 1) to `keep_fraction_min`
/// (level 7), and the quantization step doubles per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionSchedule {
    /// Per-axis displacement sigma at level 1, as a fraction of the radius.
    pub geometry_sigma_base: f64,
    pub geometry_sigma_ratio: f64,
    /// Per-channel color noise sigma at level 1.
    pub color_sigma_base: f64,
    pub color_sigma_ratio: f64,
    pub keep_fraction_max: f64,
    pub keep_fraction_min: f64,
    /// Quantization step at level 1, as a fraction of the radius.
    pub quantize_step_base: f64,
}

impl Default for DistortionSchedule {
    fn default() -> Self {
        DistortionSchedule {
            geometry_sigma_base: 0.005,
            geometry_sigma_ratio: 1.6,
            color_sigma_base: 0.02,
            color_sigma_ratio: 1.6,
            keep_fraction_max: 0.9,
            keep_fraction_min: 0.1,
            quantize_step_base: 0.004,
        }
    }
}

fn check_level(level: u8) -> Result<()> {
    if (1..=MAX_LEVEL).contains(&level) {
        Ok(())
    } else {
        Err(Error::Config(format!("distortion level {level} outside [1, {MAX_LEVEL}]")))
    }
}

impl DistortionSchedule {
    pub fn geometry_sigma(&self, level: u8) -> f64 {
        self.geometry_sigma_base * self.geometry_sigma_ratio.powi(level as i32 - 1)
    }

    pub fn color_sigma(&self, level: u8) -> f64 {
        self.color_sigma_base * self.color_sigma_ratio.powi(level as i32 - 1)
    }

    pub fn keep_fraction(&self, level: u8) -> f64 {
        let t = (level as f64 - 1.0) / (MAX_LEVEL as f64 - 1.0);
        self.keep_fraction_max + t * (self.keep_fraction_min - self.keep_fraction_max)
    }

    pub fn quantize_step(&self, level: u8) -> f64 {
        self.quantize_step_base * 2f64.powi(level as i32 - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("geometry_sigma_base", self.geometry_sigma_base),
            ("color_sigma_base", self.color_sigma_base),
            ("quantize_step_base", self.quantize_step_base),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.geometry_sigma_ratio > 1.0 && self.color_sigma_ratio > 1.0) {
            return Err(Error::Config("sigma ratios must exceed 1 for monotone severity".into()));
        }
        if !(0.1 <= self.keep_fraction_min
            && self.keep_fraction_min < self.keep_fraction_max
            && self.keep_fraction_max <= 1.0)
        {
            return Err(Error::Config(
                "keep fractions must satisfy 0.1 <= min < max <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Distortion scale for a cloud: its radius, or 1 for a degenerate cloud.
pub(crate) fn cloud_scale(cloud: &PointCloud) -> f64 {
    let r = cloud.radius();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Applies `spec` with the default schedule. Pure in `(cloud, spec)`.
pub fn synth_distort(cloud: &PointCloud, spec: &DistortionSpec) -> Result<PointCloud> {
    synth_distort_with(cloud, spec, &DistortionSchedule::default())
}

pub fn synth_distort_with(
    cloud: &PointCloud,
    spec: &DistortionSpec,
    schedule: &DistortionSchedule,
) -> Result<PointCloud> {
    cloud.ensure_non_empty()?;
    check_level(spec.level)?;
    let mut rng = rng_from(spec.seed);
    let scale = cloud_scale(cloud);
    match spec.kind {
        DistortionKind::GaussianGeometryNoise => {
            let normal = Normal::new(0.0, schedule.geometry_sigma(spec.level) * scale)
                .map_err(|e| Error::Config(e.to_string()))?;
            let positions = cloud
                .positions()
                .iter()
                .map(|p| p.map(|v| v + normal.sample(&mut rng)))
                .collect();
            Ok(cloud.with_positions(positions))
        }
        DistortionKind::ColorNoise => {
            let normal = Normal::new(0.0, schedule.color_sigma(spec.level))
                .map_err(|e| Error::Config(e.to_string()))?;
            let colors = cloud
                .colors()
                .iter()
                .map(|c| c.map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)))
                .collect();
            PointCloud::new(cloud.positions().to_vec(), colors)
        }
        DistortionKind::Downsample => {
            let n = cloud.point_count();
            let keep = ((schedule.keep_fraction(spec.level) * n as f64).ceil() as usize).clamp(1, n);
            let mut picked = index::sample(&mut rng, n, keep).into_vec();
            picked.sort_unstable();
            let positions = picked.iter().map(|&i| cloud.positions()[i]).collect();
            let colors = picked.iter().map(|&i| cloud.colors()[i]).collect();
            PointCloud::new(positions, colors)
        }
        DistortionKind::Quantize => {
            let step = schedule.quantize_step(spec.level) * scale;
            let positions = cloud
                .positions()
                .iter()
                .map(|p| p.map(|v| (v / step).round() * step))
                .collect();
            Ok(cloud.with_positions(positions))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::shapes;

    fn cloud(n: usize) -> PointCloud {
        shapes::sphere_surface(n, 1)
    }

    fn mean_displacement(a: &PointCloud, b: &PointCloud) -> f64 {
        a.positions()
            .iter()
            .zip(b.positions())
            .map(|(p, q)| crate::pointcloud::dist(p, q))
            .sum::<f64>()
            / a.point_count() as f64
    }

    #[test]
    fn geometry_noise_is_monotone_in_level() {
        let c = cloud(2000);
        let spec = |level| DistortionSpec {
            kind: DistortionKind::GaussianGeometryNoise,
            level,
            seed: 5,
        };
        let d1 = synth_distort(&c, &spec(1)).unwrap();
        let d7 = synth_distort(&c, &spec(7)).unwrap();
        assert!(mean_displacement(&c, &d7) > mean_displacement(&c, &d1));
        for level in 1..MAX_LEVEL {
            let lo = synth_distort(&c, &spec(level)).unwrap();
            let hi = synth_distort(&c, &spec(level + 1)).unwrap();
            assert!(mean_displacement(&c, &hi) > mean_displacement(&c, &lo));
        }
    }

    #[test]
    fn geometry_noise_sigma_matches_schedule() {
        let c = cloud(12_000);
        let schedule = DistortionSchedule::default();
        let scale = cloud_scale(&c);
        for level in [1, 4, 7] {
            let d = synth_distort(
                &c,
                &DistortionSpec {
                    kind: DistortionKind::GaussianGeometryNoise,
                    level,
                    seed: 99,
                },
            )
            .unwrap();
            let disp: Vec<f64> = c
                .positions()
                .iter()
                .zip(d.positions())
                .flat_map(|(p, q)| (0..3).map(move |k| q[k] - p[k]))
                .collect();
            let n = disp.len() as f64;
            let mean = disp.iter().sum::<f64>() / n;
            let sd = (disp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let target = schedule.geometry_sigma(level) * scale;
            assert!((sd / target - 1.0).abs() < 0.05, "level {level}: {sd} vs {target}");
        }
    }

    #[test]
    fn downsample_is_deterministic_and_keeps_fraction() {
        let c = cloud(1000);
        let spec = DistortionSpec {
            kind: DistortionKind::Downsample,
            level: 1,
            seed: 3,
        };
        let a = synth_distort(&c, &spec).unwrap();
        let b = synth_distort(&c, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.point_count(), 900);
        let seven = synth_distort(&c, &DistortionSpec { level: 7, ..spec }).unwrap();
        assert_eq!(seven.point_count(), 100);
    }

    #[test]
    fn quantize_snaps_to_grid() {
        let c = cloud(100);
        let level = 3;
        let d = synth_distort(
            &c,
            &DistortionSpec {
                kind: DistortionKind::Quantize,
                level,
                seed: 0,
            },
        )
        .unwrap();
        let g = DistortionSchedule::default().quantize_step(level) * cloud_scale(&c);
        assert_eq!(d.point_count(), c.point_count());
        for p in d.positions() {
            for &v in p {
                let k = v / g;
                assert!((k - k.round()).abs() < 1e-9, "{v} is not a multiple of {g}");
            }
        }
    }

    #[test]
    fn color_noise_stays_in_range() {
        let c = cloud(500);
        let d = synth_distort(
            &c,
            &DistortionSpec {
                kind: DistortionKind::ColorNoise,
                level: 7,
                seed: 1,
            },
        )
        .unwrap();
        assert!(d.colors().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.positions(), c.positions());
    }

    #[test]
    fn unknown_kind_and_bad_level_are_config_errors() {
        assert!(matches!("blur".parse::<DistortionKind>(), Err(Error::Config(_))));
        let c = cloud(10);
        let bad = DistortionSpec {
            kind: DistortionKind::Quantize,
            level: 8,
            seed: 0,
        };
        assert!(matches!(synth_distort(&c, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let empty = PointCloud::new(vec![], vec![]).unwrap();
        let spec = DistortionSpec {
            kind: DistortionKind::ColorNoise,
            level: 1,
            seed: 0,
        };
        assert!(matches!(synth_distort(&empty, &spec), Err(Error::EmptyCloud)));
    }

    proptest::proptest! {
        #[test]
        fn distortion_is_pure(seed in 0u64..1000, level in 1u8..=7, kind in 0usize..4) {
            let c = cloud(64);
            let spec = DistortionSpec { kind: DistortionKind::ALL[kind], level, seed };
            proptest::prop_assert_eq!(synth_distort(&c, &spec).unwrap(), synth_distort(&c, &spec).unwrap());
        }
    }
}
