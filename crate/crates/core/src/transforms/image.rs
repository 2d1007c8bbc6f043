//! Raster image transforms. Inputs are PNG or JPEG; outputs are PNG with the
//! input's pixel dimensions.

use std::io::Cursor;

use image::{ImageFormat, Rgba, RgbaImage};
use rand::seq::index;
use rand_distr::{Distribution, Normal};

use super::{rng_for, Modality, TransformKind, TransformSpec};
use crate::error::{FestaError, Result};

pub const MAX_BLUR_RADIUS: f64 = 3.0;
pub const MAX_NOISE_SIGMA: f64 = 10.0 / 255.0;
pub const MAX_ROTATION_DEG: f64 = 5.0;
pub const MAX_SHIFT_FRACTION: f64 = 0.05;
pub const MAX_MASK_FRACTION: f64 = 0.01;
pub const CONTRAST_RANGE: (f64, f64) = (0.5, 1.5);

const EPS: f64 = 1e-12;

fn check_range(kind: TransformKind, name: &str, v: f64, lo: f64, hi: f64) -> Result<f64> {
    if !v.is_finite() || v < lo - EPS || v > hi + EPS {
        return Err(FestaError::Config(format!(
            "{kind:?}: parameter {name}={v} outside [{lo}, {hi}]"
        )));
    }
    Ok(v)
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbaImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgba8())
        .map_err(|e| FestaError::Input(format!("undecodable image: {e}")))
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| FestaError::Input(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

/// Applies one image transform. Identity parameterizations return the input
/// bytes untouched.
pub fn apply_image_transform(image_bytes: &[u8], spec: &TransformSpec) -> Result<Vec<u8>> {
    spec.validate_modality(Modality::Image)?;
    let img = decode_image(image_bytes)?;
    let kind = spec.kind;
    let out = match kind {
        TransformKind::Contrast => {
            let f = check_range(kind, "factor", spec.require("factor")?, CONTRAST_RANGE.0, CONTRAST_RANGE.1)?;
            if f == 1.0 {
                return Ok(image_bytes.to_vec());
            }
            map_rgb(&img, |c| (c - 127.5) * f + 127.5)
        }
        TransformKind::Blur => {
            let r = check_range(kind, "radius", spec.require("radius")?, 0.0, MAX_BLUR_RADIUS)?;
            let r = r.round() as u32;
            if r == 0 {
                return Ok(image_bytes.to_vec());
            }
            box_blur(&img, r)
        }
        TransformKind::Noise => {
            let sigma = check_range(kind, "sigma", spec.require("sigma")?, 0.0, MAX_NOISE_SIGMA)?;
            if sigma == 0.0 {
                return Ok(image_bytes.to_vec());
            }
            add_noise(&img, sigma, spec.seed)
        }
        TransformKind::Mask => {
            let frac = check_range(kind, "fraction", spec.require("fraction")?, 0.0, MAX_MASK_FRACTION)?;
            let total = (img.width() * img.height()) as usize;
            let count = (frac * total as f64).round() as usize;
            if count == 0 {
                return Ok(image_bytes.to_vec());
            }
            let mut out = img.clone();
            let mut rng = rng_for(spec.seed);
            for idx in index::sample(&mut rng, total, count.min(total)) {
                let (x, y) = ((idx as u32) % img.width(), (idx as u32) / img.width());
                let a = out.get_pixel(x, y)[3];
                out.put_pixel(x, y, Rgba([0, 0, 0, a]));
            }
            out
        }
        TransformKind::Rotate => {
            let deg = check_range(kind, "degrees", spec.require("degrees")?, -MAX_ROTATION_DEG, MAX_ROTATION_DEG)?;
            if deg == 0.0 {
                return Ok(image_bytes.to_vec());
            }
            rotate(&img, deg)
        }
        TransformKind::Shift => {
            let dx = check_range(kind, "dx", spec.param("dx").unwrap_or(0.0), -MAX_SHIFT_FRACTION, MAX_SHIFT_FRACTION)?;
            let dy = check_range(kind, "dy", spec.param("dy").unwrap_or(0.0), -MAX_SHIFT_FRACTION, MAX_SHIFT_FRACTION)?;
            let px = (dx * img.width() as f64).round() as i64;
            let py = (dy * img.height() as f64).round() as i64;
            if px == 0 && py == 0 {
                return Ok(image_bytes.to_vec());
            }
            shift(&img, px, py)
        }
        TransformKind::Grayscale => grayscale(&img),
        TransformKind::Hflip => {
            let flipped = image::imageops::flip_horizontal(&img);
            let sigma = check_range(kind, "noise_sigma", spec.param("noise_sigma").unwrap_or(0.0), 0.0, MAX_NOISE_SIGMA)?;
            if sigma > 0.0 {
                add_noise(&flipped, sigma, spec.seed)
            } else {
                flipped
            }
        }
        other => {
            return Err(FestaError::Config(format!("{other:?} is not an image transform")));
        }
    };
    encode_png(&out)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_rgb(img: &RgbaImage, f: impl Fn(f64) -> f64) -> RgbaImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p[c] = to_u8(f(p[c] as f64));
        }
    }
    out
}

fn grayscale(img: &RgbaImage) -> RgbaImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let l = to_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64);
        p[0] = l;
        p[1] = l;
        p[2] = l;
    }
    out
}

fn add_noise(img: &RgbaImage, sigma: f64, seed: u64) -> RgbaImage {
    let mut rng = rng_for(seed);
    let normal = Normal::new(0.0, sigma * 255.0).expect("sigma is finite and positive");
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p[c] = to_u8(p[c] as f64 + normal.sample(&mut rng));
        }
    }
    out
}

/// Separable box blur with edge clamping.
fn box_blur(img: &RgbaImage, radius: u32) -> RgbaImage {
    let (w, h) = img.dimensions();
    let r = radius as i64;
    let pass = |src: &RgbaImage, horizontal: bool| {
        let mut dst = src.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0u32; 3];
                for d in -r..=r {
                    let (sx, sy) = if horizontal {
                        ((x as i64 + d).clamp(0, w as i64 - 1) as u32, y)
                    } else {
                        (x, (y as i64 + d).clamp(0, h as i64 - 1) as u32)
                    };
                    let p = src.get_pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += p[c] as u32;
                    }
                }
                let n = (2 * r + 1) as f64;
                let p = dst.get_pixel_mut(x, y);
                for c in 0..3 {
                    p[c] = to_u8(acc[c] as f64 / n);
                }
            }
        }
        dst
    };
    let tmp = pass(img, true);
    pass(&tmp, false)
}

fn sample_clamped(img: &RgbaImage, x: i64, y: i64) -> &Rgba<u8> {
    let (w, h) = img.dimensions();
    img.get_pixel(x.clamp(0, w as i64 - 1) as u32, y.clamp(0, h as i64 - 1) as u32)
}

/// Rotation about the image center with bilinear sampling and edge replication.
fn rotate(img: &RgbaImage, degrees: f64) -> RgbaImage {
    let (w, h) = img.dimensions();
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = RgbaImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse mapping: rotate destination back into the source
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let p00 = sample_clamped(img, x0, y0);
            let p10 = sample_clamped(img, x0 + 1, y0);
            let p01 = sample_clamped(img, x0, y0 + 1);
            let p11 = sample_clamped(img, x0 + 1, y0 + 1);
            let mut px = [0u8; 4];
            for ch in 0..4 {
                let top = p00[ch] as f64 * (1.0 - fx) + p10[ch] as f64 * fx;
                let bot = p01[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
                px[ch] = to_u8(top * (1.0 - fy) + bot * fy);
            }
            out.put_pixel(x, y, Rgba(px));
        }
    }
    out
}

/// Integer translation by `(dx, dy)` pixels with edge replication.
fn shift(img: &RgbaImage, dx: i64, dy: i64) -> RgbaImage {
    let (w, h) = img.dimensions();
    RgbaImage::from_fn(w, h, |x, y| *sample_clamped(img, x as i64 - dx, y as i64 - dy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(w: u32, h: u32) -> Vec<u8> {
        let img = RgbaImage::from_fn(w, h, |x, y| {
            Rgba([(x * 37 % 256) as u8, (y * 53 % 256) as u8, ((x + y) * 11 % 256) as u8, 255])
        });
        encode_png(&img).unwrap()
    }

    fn spec(kind: TransformKind) -> TransformSpec {
        TransformSpec::new(kind, 42)
    }

    #[test]
    fn grayscale_has_equal_channels() {
        let out = apply_image_transform(&test_image(16, 9), &spec(TransformKind::Grayscale)).unwrap();
        let img = decode_image(&out).unwrap();
        assert!(img.pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn zero_noise_is_identity() {
        let input = test_image(8, 8);
        let out = apply_image_transform(&input, &spec(TransformKind::Noise).with("sigma", 0.0)).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn hflip_swaps_columns_of_2x2() {
        let img = RgbaImage::from_fn(2, 2, |x, y| Rgba([(10 * x + y) as u8, 0, 0, 255]));
        let out = apply_image_transform(&encode_png(&img).unwrap(), &spec(TransformKind::Hflip)).unwrap();
        let flipped = decode_image(&out).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(flipped.get_pixel(x, y), img.get_pixel(1 - x, y));
            }
        }
    }

    #[test]
    fn equivalence_kinds_preserve_dimensions_and_are_deterministic() {
        let input = test_image(20, 13);
        let specs = [
            spec(TransformKind::Contrast).with("factor", 1.2),
            spec(TransformKind::Blur).with("radius", 2.0),
            spec(TransformKind::Noise).with("sigma", 5.0 / 255.0),
            spec(TransformKind::Mask).with("fraction", 0.01),
            spec(TransformKind::Rotate).with("degrees", -4.0),
            spec(TransformKind::Shift).with("dx", 0.05).with("dy", -0.05),
            spec(TransformKind::Grayscale),
        ];
        for s in &specs {
            let a = apply_image_transform(&input, s).unwrap();
            let b = apply_image_transform(&input, s).unwrap();
            assert_eq!(a, b, "{:?} not deterministic", s.kind);
            assert_eq!(decode_image(&a).unwrap().dimensions(), (20, 13));
        }
    }

    #[test]
    fn out_of_range_params_rejected() {
        let input = test_image(4, 4);
        for s in [
            spec(TransformKind::Blur).with("radius", 4.0),
            spec(TransformKind::Noise).with("sigma", 0.1),
            spec(TransformKind::Rotate).with("degrees", 6.0),
            spec(TransformKind::Shift).with("dx", 0.2),
            spec(TransformKind::Mask).with("fraction", 0.05),
        ] {
            assert!(matches!(apply_image_transform(&input, &s), Err(FestaError::Config(_))));
        }
    }

    #[test]
    fn undecodable_input_rejected() {
        assert!(matches!(
            apply_image_transform(b"not an image", &spec(TransformKind::Grayscale)),
            Err(FestaError::Input(_))
        ));
    }

    #[test]
    fn shift_replicates_edges() {
        let img = RgbaImage::from_fn(20, 1, |x, _| Rgba([x as u8, 0, 0, 255]));
        let out = apply_image_transform(&encode_png(&img).unwrap(), &spec(TransformKind::Shift).with("dx", 0.05)).unwrap();
        let shifted = decode_image(&out).unwrap();
        assert_eq!(shifted.get_pixel(0, 0)[0], 0);
        assert_eq!(shifted.get_pixel(1, 0)[0], 0);
        assert_eq!(shifted.get_pixel(19, 0)[0], 18);
    }

    #[test]
    fn mask_blackens_requested_pixel_count() {
        let img = RgbaImage::from_pixel(20, 20, Rgba([200, 200, 200, 255]));
        let out = apply_image_transform(&encode_png(&img).unwrap(), &spec(TransformKind::Mask).with("fraction", 0.01)).unwrap();
        let masked = decode_image(&out).unwrap();
        assert_eq!(masked.pixels().filter(|p| p[0] == 0).count(), 4);
    }
}
