use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::bilinear_at;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Random training-time image transforms. Applied to images only, never to
/// labels, and never at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub horizontal_flip_prob: f64,
    /// Maximum shift as a fraction of the image dimension.
    pub shift_fraction: f64,
    /// Zoom scale is drawn from `[1 − zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 15.0,
            horizontal_flip_prob: 0.5,
            shift_fraction: 0.1,
            zoom_range: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            horizontal_flip_prob: 0.0,
            shift_fraction: 0.0,
            zoom_range: 0.0,
        }
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, max: f64) -> f64 {
    (rng.gen::<f64>() * 2.0 - 1.0) * max
}

/// Resamples `img` through an inverse coordinate map, replicating edges.
fn warp<T: Scalar>(img: &Tensor<T>, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor<T> {
    let s = img.shape();
    let (max_y, max_x) = ((s.height - 1) as f64, (s.width - 1) as f64);
    let mut out = Tensor::zeros(s);
    for y in 0..s.height {
        for x in 0..s.width {
            let (sy, sx) = map(y as f64, x as f64);
            let (sy, sx) = (sy.clamp(0.0, max_y), sx.clamp(0.0, max_x));
            for c in 0..s.channels {
                out.set(y, x, c, bilinear_at(img, sy, sx, c));
            }
        }
    }
    out
}

/// Rotation, horizontal flip, shift, then zoom. All four random draws are
/// taken on every call so the rng stream does not depend on the config.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    image: &Tensor<T>,
    config: &AugmentConfig,
    rng: &mut R,
) -> Tensor<T> {
    let angle = symmetric(rng, config.rotation_max_deg).to_radians();
    let flip = rng.gen::<f64>() < config.horizontal_flip_prob;
    let dy = symmetric(rng, config.shift_fraction);
    let dx = symmetric(rng, config.shift_fraction);
    let scale = 1.0 + symmetric(rng, config.zoom_range);

    let s = image.shape();
    if s.is_empty() {
        return image.clone();
    }
    let (cy, cx) = ((s.height - 1) as f64 / 2.0, (s.width - 1) as f64 / 2.0);
    let mut out = image.clone();
    if angle != 0.0 {
        let (sin, cos) = angle.sin_cos();
        out = warp(&out, |y, x| {
            let (ry, rx) = (y - cy, x - cx);
            (cy + cos * ry - sin * rx, cx + sin * ry + cos * rx)
        });
    }
    if flip {
        let src = out.clone();
        out = Tensor::from_fn(s, |y, x, c| src.get(y, s.width - 1 - x, c));
    }
    if dy != 0.0 || dx != 0.0 {
        let (oy, ox) = (dy * s.height as f64, dx * s.width as f64);
        out = warp(&out, |y, x| (y - oy, x - ox));
    }
    if scale != 1.0 {
        out = warp(&out, |y, x| (cy + (y - cy) / scale, cx + (x - cx) / scale));
    }
    out.map(|v| v.max(T::zero()).min(T::one()))
}
