//! Image decode/encode: PNG (8/16-bit) and JPEG in, 8-bit PNG out. Inputs
//! are always delivered as RGB in `[0, 1]`.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use image::{DynamicImage, ImageReader, Rgb, RgbImage};
use mef_core::tensor::{Image, Tensor};

/// Decode an image file into an RGB image in `[0, 1]`. 8-bit samples map
/// `255 -> 1.0`; 16-bit samples map `65535 -> 1.0`. Grayscale inputs are
/// replicated across the three channels.
pub fn load_image(path: &Path) -> Result<Image> {
    let decoded = ImageReader::open(path)
        .with_context(|| format!("cannot open image {}", path.display()))?
        .decode()
        .with_context(|| format!("cannot decode image {}", path.display()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut t = Tensor::zeros(3, h, w);
    match decoded {
        DynamicImage::ImageLuma16(img) => {
            for (x, y, p) in img.enumerate_pixels() {
                let v = p.0[0] as f64 / 65535.0;
                for c in 0..3 {
                    t.set(c, y as usize, x as usize, v);
                }
            }
        }
        DynamicImage::ImageRgb16(img) => {
            for (x, y, p) in img.enumerate_pixels() {
                for c in 0..3 {
                    t.set(c, y as usize, x as usize, p.0[c] as f64 / 65535.0);
                }
            }
        }
        DynamicImage::ImageRgba16(img) => {
            for (x, y, p) in img.enumerate_pixels() {
                for c in 0..3 {
                    t.set(c, y as usize, x as usize, p.0[c] as f64 / 65535.0);
                }
            }
        }
        eight_bit => {
            let rgb = eight_bit.to_rgb8();
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    t.set(c, y as usize, x as usize, p.0[c] as f64 / 255.0);
                }
            }
        }
    }
    Image::new(t).map_err(|e| anyhow!("invalid pixel data in {}: {e}", path.display()))
}

/// Encode an RGB image (grayscale is replicated) to an 8-bit PNG.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| -> u8 {
                let ch = if img.channels() == 1 { 0 } else { c };
                (img.get(ch, y, x) * 255.0).round().clamp(0.0, 255.0) as u8
            };
            out.put_pixel(x as u32, y as u32, Rgb([px(0), px(1), px(2)]));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    out.save(path)
        .with_context(|| format!("cannot write PNG {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mef_testkit::synthetic_scene;

    #[test]
    fn png_roundtrip_preserves_all_256_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("levels.png");
        let data: Vec<f64> = (0..256).map(|v| v as f64 / 255.0).collect();
        let img = Image::new(Tensor::from_vec(1, 16, 16, data).unwrap()).unwrap();
        save_png(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        for i in 0..256 {
            let (y, x) = (i / 16, i % 16);
            let expect = i as f64 / 255.0;
            assert_eq!(back.get(0, y, x), expect, "level {i}");
            assert_eq!(back.get(1, y, x), expect);
        }
    }

    #[test]
    fn png_write_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let img = synthetic_scene(24, 24, 5);
        let p1 = dir.path().join("a.png");
        let p2 = dir.path().join("b.png");
        save_png(&p1, &img).unwrap();
        save_png(&p2, &img).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn missing_file_errors() {
        assert!(load_image(Path::new("/nonexistent/x.png")).is_err());
    }
}
