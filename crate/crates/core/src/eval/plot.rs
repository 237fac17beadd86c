use std::path::Path;

use super::Logistic4;
use crate::error::{Error, Result};
use crate::render::{save_png, ProjectedImage};

const SIZE: usize = 400;
const MARGIN: usize = 20;

/// Writes a `400×400` PNG scatter of predictions (x) against MOS (y), with
/// the fitted logistic curve when given.
pub fn scatter_plot(pred: &[f64], mos: &[f64], curve: Option<&Logistic4>, path: &Path) -> Result<()> {
    if pred.len() != mos.len() || pred.is_empty() {
        return Err(Error::Shape("scatter plot needs equally long, non-empty inputs".into()));
    }
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = range(pred);
    let (y0, y1) = range(mos);
    let span = (SIZE - 2 * MARGIN - 1) as f64;
    let to_px = |x: f64, y: f64| {
        let c = MARGIN as f64 + (x - x0) / (x1 - x0) * span;
        let r = MARGIN as f64 + (1.0 - (y - y0) / (y1 - y0)) * span;
        (r.round() as isize, c.round() as isize)
    };
    let mut img = ProjectedImage::filled(SIZE, SIZE, [1.0; 3]);
    let put = |img: &mut ProjectedImage, r: isize, c: isize, rgb: [f64; 3]| {
        if (0..SIZE as isize).contains(&r) && (0..SIZE as isize).contains(&c) {
            img.set_pixel(r as usize, c as usize, rgb);
        }
    };
    for i in MARGIN..SIZE - MARGIN {
        put(&mut img, (SIZE - MARGIN) as isize, i as isize, [0.0; 3]);
        put(&mut img, i as isize, MARGIN as isize - 1, [0.0; 3]);
    }
    if let Some(f) = curve {
        for c in 0..=span as usize {
            let x = x0 + c as f64 / span * (x1 - x0);
            let (r, col) = to_px(x, f.eval(x).clamp(y0, y1));
            put(&mut img, r, col, [0.85, 0.1, 0.1]);
        }
    }
    for (x, y) in pred.iter().zip(mos) {
        let (r, c) = to_px(*x, *y);
        for dr in -1..=1 {
            for dc in -1..=1 {
                put(&mut img, r + dr, c + dc, [0.1, 0.2, 0.8]);
            }
        }
    }
    save_png(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let curve = Logistic4 { beta: [5.0, 1.0, 0.0, 1.0] };
        scatter_plot(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], Some(&curve), &path).unwrap();
        let img = crate::render::load_png(&path).unwrap();
        assert_eq!((img.height, img.width), (SIZE, SIZE));
        assert!(img.pixels.iter().any(|&v| v < 0.5));
    }
}
