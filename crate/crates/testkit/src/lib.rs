//! Test-only fixtures and independent metric oracles shared by the
//! workspace's test suites. Nothing here is part of the shipped library.

pub mod oracle;

use mef_core::data::{ExposurePair, NaturalPool};
use mef_core::rng;
use mef_core::tensor::{Image, Tensor};
use rand::Rng as _;

/// Uniform noise tensor in `[0, 1]`.
pub fn noise_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "testkit-noise", &[]);
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.random::<f64>()).collect()).unwrap()
}

pub fn noise_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
    Image::new(noise_tensor(c, h, w, seed)).unwrap()
}

/// A structured synthetic RGB scene: smooth color gradients, a few boxes of
/// differing brightness, and fine texture so gradient- and structure-based
/// measures have something to see. Values stay within `[0.02, 0.98]`.
pub fn synthetic_scene(h: usize, w: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, "testkit-scene", &[]);
    let fx: f64 = 1.0 + 2.0 * r.random::<f64>();
    let fy: f64 = 1.0 + 2.0 * r.random::<f64>();
    let phase: f64 = core::f64::consts::TAU * r.random::<f64>();
    let tex_amp: f64 = 0.05 + 0.05 * r.random::<f64>();
    let mut t = Tensor::zeros(3, h, w);
    let mut boxes = Vec::new();
    for _ in 0..4 {
        let by = r.random_range(0..h.max(2) - 1);
        let bx = r.random_range(0..w.max(2) - 1);
        let bh = 2 + r.random_range(0..h / 2 + 1);
        let bw = 2 + r.random_range(0..w / 2 + 1);
        let level: f64 = r.random::<f64>();
        boxes.push((by, bx, bh, bw, level));
    }
    for c in 0..3 {
        let cshift = 0.13 * c as f64;
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / w as f64;
                let v = y as f64 / h as f64;
                let base = 0.45
                    + 0.25 * libm::sin(core::f64::consts::TAU * (fx * u + fy * v) + phase + cshift)
                    + 0.15 * (u - v);
                let texture = tex_amp
                    * libm::sin(core::f64::consts::TAU * (9.0 * u + 7.0 * v) + cshift * 5.0);
                let mut val = base + texture;
                for &(by, bx, bh, bw, level) in &boxes {
                    if y >= by && y < (by + bh).min(h) && x >= bx && x < (bx + bw).min(w) {
                        val = 0.6 * val + 0.4 * level;
                    }
                }
                t.set(c, y, x, val.clamp(0.02, 0.98));
            }
        }
    }
    Image::new(t).unwrap()
}

/// Separable Gaussian blur with replicated borders.
pub fn gauss_blur(t: &Tensor, sigma: f64) -> Tensor {
    let radius = (2.0 * sigma).ceil() as usize;
    let side = 2 * radius + 1;
    let mut k = vec![0.0; side];
    for (i, kv) in k.iter_mut().enumerate() {
        let d = i as f64 - radius as f64;
        *kv = libm::exp(-d * d / (2.0 * sigma * sigma));
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (c, h, w) = t.shape();
    let mut tmp = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sx = (x as isize + i as isize - radius as isize).clamp(0, w as isize - 1);
                    acc += kv * t.get(ch, y, sx as usize);
                }
                tmp.set(ch, y, x, acc);
            }
        }
    }
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let sy = (y as isize + i as isize - radius as isize).clamp(0, h as isize - 1);
                    acc += kv * tmp.get(ch, sy as usize, x);
                }
                out.set(ch, y, x, acc);
            }
        }
    }
    out
}

/// Simulated exposures of a scene: the under-exposure crushes shadows, the
/// over-exposure saturates highlights. The pseudo reference is produced by a
/// simple fusion rule (contrast-expanded source average), mirroring datasets
/// whose ground truths come from existing fusion algorithms.
pub fn toy_pair(id: &str, h: usize, w: usize, seed: u64) -> ExposurePair {
    let scene = synthetic_scene(h, w, seed);
    let under = Image::new(scene.map(|v| (0.45 * v * v + 0.02).clamp(0.0, 1.0))).unwrap();
    let over = Image::new(scene.map(|v| (2.1 * v + 0.05).clamp(0.0, 1.0))).unwrap();
    let avg = under.zip(&over, |a, b| 0.5 * (a + b));
    let blurred = gauss_blur(&avg, 3.0);
    let reference = Image::new(
        avg.zip(&blurred, |a, b| (a + 1.2 * (a - b)).clamp(0.0, 1.0)),
    )
    .unwrap();
    ExposurePair::new(id, under, over, Some(reference)).unwrap()
}

/// A deterministic toy dataset of exposure pairs with references.
pub fn toy_dataset(n: usize, h: usize, w: usize, seed: u64) -> Vec<ExposurePair> {
    (0..n)
        .map(|i| {
            toy_pair(
                &format!("toy{i:02}"),
                h,
                w,
                rng::derive_seed(seed, "toy-pair", &[i as u64]),
            )
        })
        .collect()
}

/// A small pool of natural-light images (well-exposed smooth scenes).
pub fn toy_pool(n: usize, h: usize, w: usize, seed: u64) -> NaturalPool {
    NaturalPool::new(
        (0..n)
            .map(|i| synthetic_scene(h, w, rng::derive_seed(seed, "toy-pool", &[i as u64])))
            .collect(),
    )
}
