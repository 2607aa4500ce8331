use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Catalog images are 80×60; 64×64 lets three 2× poolings land on 8×8.
pub const DEFAULT_TARGET_SIZE: (usize, usize) = (64, 64);

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, height: usize, width: usize) -> Tensor<T> {
    let s = input.shape();
    if s.height == height && s.width == width {
        return input.clone();
    }
    let sy = s.height as f64 / height as f64;
    let sx = s.width as f64 / width as f64;
    Tensor::from_fn(Shape::new(height, width, s.channels), |y, x, c| {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (s.height - 1) as f64);
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (s.width - 1) as f64);
        bilinear_at(input, fy, fx, c)
    })
}

/// Samples channel `c` at fractional `(fy, fx)`; coordinates must already be
/// clamped into the image.
#[inline]
pub(crate) fn bilinear_at<T: Scalar>(img: &Tensor<T>, fy: f64, fx: f64, c: usize) -> T {
    let s = img.shape();
    let y0 = fy.floor() as usize;
    let x0 = fx.floor() as usize;
    let y1 = (y0 + 1).min(s.height - 1);
    let x1 = (x0 + 1).min(s.width - 1);
    let ty = T::from_f64_lossy(fy - y0 as f64);
    let tx = T::from_f64_lossy(fx - x0 as f64);
    // a + (b − a)·t keeps constant regions exactly constant
    let lerp = |a: T, b: T, t: T| a + (b - a) * t;
    let top = lerp(img.get(y0, x0, c), img.get(y0, x1, c), tx);
    let bottom = lerp(img.get(y1, x0, c), img.get(y1, x1, c), tx);
    lerp(top, bottom, ty)
}

fn from_dynamic<T: Scalar>(img: ::image::DynamicImage, target: (usize, usize)) -> Tensor<T> {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let scale = T::from_f64_lossy(1.0 / 255.0);
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|v| T::from_u8(v).expect("byte fits") * scale)
        .collect();
    let full = Tensor::from_vec(Shape::new(h, w, 3), data).expect("rgb buffer is h*w*3");
    resize_bilinear(&full, target.0, target.1)
}

/// Decodes an image file into a 3-channel tensor in `[0, 1]` resized to
/// `target` (height, width). Grayscale sources are replicated to RGB.
pub fn decode_image<T: Scalar>(
    path: impl AsRef<Path>,
    target: (usize, usize),
) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = ::image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(from_dynamic(img, target))
}

/// In-memory variant of [`decode_image`]; the format is sniffed from the bytes.
pub fn decode_image_bytes<T: Scalar>(bytes: &[u8], target: (usize, usize)) -> Result<Tensor<T>> {
    let img = ::image::load_from_memory(bytes).map_err(|e| Error::Decode {
        path: "<upload>".into(),
        message: e.to_string(),
    })?;
    Ok(from_dynamic(img, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ::image::{ImageFormat, Luma, Rgb, RgbImage};

    #[test]
    fn white_jpeg_decodes_to_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("1.jpg");
        RgbImage::from_pixel(60, 80, Rgb([255, 255, 255]))
            .save_with_format(&path, ImageFormat::Jpeg)
            .unwrap();
        let t: Tensor<f32> = decode_image(&path, DEFAULT_TARGET_SIZE).unwrap();
        assert_eq!(t.shape(), Shape::new(64, 64, 3));
        assert!(t.as_slice().iter().all(|&v| (v - 1.0).abs() <= 1.0 / 255.0));
    }

    #[test]
    fn grayscale_is_replicated() {
        let img = ::image::GrayImage::from_pixel(8, 8, Luma([51]));
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)
            .unwrap();
        let t: Tensor<f64> = decode_image_bytes(&bytes, (64, 64)).unwrap();
        assert!(t.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-9));
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jpg");
        std::fs::write(&path, b"not an image").unwrap();
        match decode_image::<f32>(&path, DEFAULT_TARGET_SIZE) {
            Err(Error::Decode { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected decode error, got {other:?}"),
        }
        assert!(decode_image_bytes::<f32>(b"\x00\x01", DEFAULT_TARGET_SIZE).is_err());
    }

    #[test]
    fn constant_regions_survive_upscaling() {
        // left half 0.25, right half 0.75 on an 8x8 source
        let src = Tensor::<f64>::from_fn(
            Shape::new(8, 8, 1),
            |_, x, _| if x < 4 { 0.25 } else { 0.75 },
        );
        let up = resize_bilinear(&src, 64, 64);
        for y in 0..64 {
            // output column x samples source coordinate (x + 0.5) / 8 − 0.5
            for x in 0..64 {
                let sx = (x as f64 + 0.5) / 8.0 - 0.5;
                let v = up.get(y, x, 0);
                if sx <= 3.0 {
                    assert_eq!(v, 0.25);
                } else if sx >= 4.0 {
                    assert_eq!(v, 0.75);
                } else {
                    let t = sx - 3.0;
                    assert!((v - (0.25 + 0.5 * t)).abs() < 1e-12);
                }
            }
        }
        let flat = Tensor::<f32>::filled(Shape::new(8, 8, 3), 0.3);
        assert!(resize_bilinear(&flat, 64, 64)
            .as_slice()
            .iter()
            .all(|&v| v == 0.3));
    }
}
