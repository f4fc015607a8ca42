//! Gradient-based fusion quality: how well each source's edge strength and
//! orientation survive into the fused image, weighted by source strength.

use alloc::vec::Vec;

use crate::data::ExposurePair;
use crate::error::CoreResult;
use crate::fmath;
use crate::tensor::{luminance, Tensor};

const GAMMA_G: f64 = 0.9994;
const KAPPA_G: f64 = -15.0;
const SIGMA_G: f64 = 0.5;
const GAMMA_A: f64 = 0.9879;
const KAPPA_A: f64 = -22.0;
const SIGMA_A: f64 = 0.8;

/// Sobel strength and orientation (folded into `(-pi/2, pi/2]`) of a
/// luminance plane. Borders replicate, so constant images have no edges.
fn sobel_ga(y: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        y[r * w + c]
    };
    let mut g = alloc::vec![0.0; h * w];
    let mut a = alloc::vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            // Paired differences so constant regions cancel exactly.
            let gx = (at(r - 1, c + 1) - at(r - 1, c - 1))
                + 2.0 * (at(r, c + 1) - at(r, c - 1))
                + (at(r + 1, c + 1) - at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) - at(r - 1, c - 1))
                + 2.0 * (at(r + 1, c) - at(r - 1, c))
                + (at(r + 1, c + 1) - at(r - 1, c + 1));
            let i = r as usize * w + c as usize;
            g[i] = fmath::sqrt(gx * gx + gy * gy);
            a[i] = if gx == 0.0 && gy == 0.0 {
                0.0
            } else {
                let mut ang = fmath::atan2(gy, gx);
                if ang > core::f64::consts::FRAC_PI_2 {
                    ang -= core::f64::consts::PI;
                } else if ang <= -core::f64::consts::FRAC_PI_2 {
                    ang += core::f64::consts::PI;
                }
                ang
            };
        }
    }
    (g, a)
}

/// Per-pixel preservation of one source in the fused image. Zero where the
/// fused image carries no edge: nothing was transferred.
fn preservation(gs: f64, as_: f64, gf: f64, af: f64) -> f64 {
    if gf == 0.0 || gs == 0.0 {
        return 0.0;
    }
    let g_ratio = if gs > gf { gf / gs } else { gs / gf };
    let a_sim = 1.0 - (as_ - af).abs() / core::f64::consts::FRAC_PI_2;
    let qg = GAMMA_G / (1.0 + fmath::exp(KAPPA_G * (g_ratio - SIGMA_G)));
    let qa = GAMMA_A / (1.0 + fmath::exp(KAPPA_A * (a_sim - SIGMA_A)));
    qg * qa
}

/// The fusion quality index over a fused image and its source pair.
pub fn qabf(f: &Tensor, pair: &ExposurePair) -> CoreResult<f64> {
    f.check_same_shape(&pair.under, "qabf inputs")?;
    let (h, w) = (f.height(), f.width());
    let yf = luminance(f);
    let yu = luminance(&pair.under);
    let yo = luminance(&pair.over);
    let (gf, af) = sobel_ga(&yf, h, w);
    let (gu, au) = sobel_ga(&yu, h, w);
    let (go, ao) = sobel_ga(&yo, h, w);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..h * w {
        let qa = preservation(gu[i], au[i], gf[i], af[i]);
        let qb = preservation(go[i], ao[i], gf[i], af[i]);
        num += qa * gu[i] + qb * go[i];
        den += gu[i] + go[i];
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}
