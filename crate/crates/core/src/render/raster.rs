use super::{normalize_to_unit_ball, ImageSource, ProjectedImage, RenderConfig};
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Pinhole camera placed on a ray through the origin, looking at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Unit vector from the origin toward the camera.
    pub direction: [f64; 3],
    /// Approximate up vector; orthogonalized against the viewing axis.
    pub up: [f64; 3],
}

/// Fine-tuning viewpoints as `(camera direction, up)`, in view-id order
/// 1..=6: +x, −x, +y, −y, +z, −z. The stitched image places views 1-3 in the
/// top row and 4-6 in the bottom row.
pub const VIEW_AXES: [CameraPose; 6] = [
    CameraPose { direction: [1.0, 0.0, 0.0], up: [0.0, 1.0, 0.0] },
    CameraPose { direction: [-1.0, 0.0, 0.0], up: [0.0, 1.0, 0.0] },
    CameraPose { direction: [0.0, 1.0, 0.0], up: [0.0, 0.0, -1.0] },
    CameraPose { direction: [0.0, -1.0, 0.0], up: [0.0, 0.0, 1.0] },
    CameraPose { direction: [0.0, 0.0, 1.0], up: [0.0, 1.0, 0.0] },
    CameraPose { direction: [0.0, 0.0, -1.0], up: [0.0, 1.0, 0.0] },
];

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = dot(&a, &a).sqrt();
    a.map(|v| v / n)
}

/// Renders from the default camera on +z with +y up.
pub fn render(cloud: &PointCloud, config: &RenderConfig) -> Result<ProjectedImage> {
    render_from(cloud, config, &VIEW_AXES[4])
}

/// Projects every point through a pinhole camera at
/// `camera_distance · pose.direction` and splats an integer-pixel disc with
/// z-buffering. Ties at equal depth resolve to the smaller color, so the
/// result does not depend on point order.
pub fn render_from(cloud: &PointCloud, config: &RenderConfig, pose: &CameraPose) -> Result<ProjectedImage> {
    cloud.ensure_non_empty()?;
    config.validate()?;
    let forward = unit(pose.direction.map(|v| -v));
    let right = unit(cross(forward, pose.up));
    let up = cross(right, forward);
    let cam = pose.direction.map(|v| v * config.camera_distance);
    let (h, w) = (config.height, config.width);
    let f = config.focal_length_px();
    let r = config.splat_radius as i64;
    let mut depth = vec![f64::INFINITY; h * w];
    let mut color = vec![config.background_color; h * w];
    for (p, c) in cloud.positions().iter().zip(cloud.colors()) {
        let rel = [p[0] - cam[0], p[1] - cam[1], p[2] - cam[2]];
        let z = dot(&rel, &forward);
        if z <= 1e-9 {
            continue;
        }
        let u = w as f64 / 2.0 + f * dot(&rel, &right) / z;
        let v = h as f64 / 2.0 - f * dot(&rel, &up) / z;
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        let (cx, cy) = (u.floor() as i64, v.floor() as i64);
        for dy in -r..=r {
            let py = cy + dy;
            if py < 0 || py >= h as i64 {
                continue;
            }
            for dx in -r..=r {
                let px = cx + dx;
                if px < 0 || px >= w as i64 || dx * dx + dy * dy > r * r {
                    continue;
                }
                let idx = py as usize * w + px as usize;
                let closer = z < depth[idx] || (z == depth[idx] && lex_less(c, &color[idx]));
                if closer {
                    depth[idx] = z;
                    color[idx] = *c;
                }
            }
        }
    }
    let mut pixels = Vec::with_capacity(h * w * 3);
    for c in color {
        pixels.extend_from_slice(&c);
    }
    Ok(ProjectedImage {
        height: h,
        width: w,
        channels: 3,
        pixels,
        view_id: 0,
        source: ImageSource::default(),
    })
}

fn lex_less(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.partial_cmp(b) == Some(std::cmp::Ordering::Less)
}

/// Normalizes the cloud and renders it from the six axis cameras of
/// [`VIEW_AXES`]; view ids run 1..=6.
pub fn render_six_views(
    cloud: &PointCloud,
    config: &RenderConfig,
    source: ImageSource,
) -> Result<Vec<ProjectedImage>> {
    let normalized = normalize_to_unit_ball(cloud)?;
    VIEW_AXES
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut img = render_from(&normalized, config, pose)?;
            img.view_id = i as u8 + 1;
            img.source = source;
            Ok(img)
        })
        .collect()
}

/// Tiles six equally sized views into a `2H×3W` image, view `k` at block
/// `((k-1) / 3, (k-1) % 3)`.
pub fn stitch_views(views: &[ProjectedImage]) -> Result<ProjectedImage> {
    if views.len() != 6 {
        return Err(Error::Shape(format!("stitching needs 6 views, got {}", views.len())));
    }
    let (h, w) = (views[0].height, views[0].width);
    if views.iter().any(|v| !v.same_shape(&views[0])) {
        return Err(Error::Shape("all views must share one shape".into()));
    }
    let mut slots: [Option<&ProjectedImage>; 6] = [None; 6];
    for v in views {
        let k = v.view_id as usize;
        if !(1..=6).contains(&k) || slots[k - 1].is_some() {
            return Err(Error::Shape(format!("view ids must be a permutation of 1..=6, found {}", v.view_id)));
        }
        slots[k - 1] = Some(v);
    }
    let mut out = ProjectedImage::filled(2 * h, 3 * w, [0.0; 3]);
    for (k, view) in slots.iter().enumerate() {
        let view = view.expect("all slots filled");
        let (br, bc) = (k / 3, k % 3);
        for row in 0..h {
            let src = row * w * 3;
            let dst = ((br * h + row) * 3 * w + bc * w) * 3;
            out.pixels[dst..dst + w * 3].copy_from_slice(&view.pixels[src..src + w * 3]);
        }
    }
    out.source = views[0].source;
    Ok(out)
}
