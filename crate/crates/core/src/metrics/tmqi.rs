//! Tone-mapped image quality index: multi-scale structural fidelity with a
//! contrast-sensitivity mapping of local signal strength, combined with a
//! statistical-naturalness term, using the published constants.

use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::fmath;
use crate::metrics::MS_SSIM_WEIGHTS;
use crate::ssim::gaussian_window;
use crate::tensor::{luminance, Tensor};

const A: f64 = 0.8012;
const ALPHA: f64 = 0.3046;
const BETA: f64 = 0.7088;
const C1: f64 = 0.01;
const C2: f64 = 10.0;
const WINDOW: usize = 11;

struct Plane {
    data: Vec<f64>,
    h: usize,
    w: usize,
}

fn luma255_plane(img: &Tensor) -> Plane {
    let mut y = luminance(img);
    for v in &mut y {
        *v *= 255.0;
    }
    Plane {
        data: y,
        h: img.height(),
        w: img.width(),
    }
}

fn filter_valid(p: &Plane, win: &[f64], side: usize) -> Vec<f64> {
    let oh = p.h - side + 1;
    let ow = p.w - side + 1;
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for ky in 0..side {
                for kx in 0..side {
                    acc += win[ky * side + kx] * p.data[(y + ky) * p.w + (x + kx)];
                }
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn downsample2(p: &Plane) -> Plane {
    let oh = p.h / 2;
    let ow = p.w / 2;
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (p.data[2 * y * p.w + 2 * x]
                    + p.data[2 * y * p.w + 2 * x + 1]
                    + p.data[(2 * y + 1) * p.w + 2 * x]
                    + p.data[(2 * y + 1) * p.w + 2 * x + 1]);
        }
    }
    Plane {
        data: out,
        h: oh,
        w: ow,
    }
}

/// Structural fidelity at one scale: SSIM machinery on contrast-mapped local
/// signal strengths. `sf` is the spatial frequency driving the CSF.
fn structural_fidelity(x: &Plane, y: &Plane, sf: f64) -> f64 {
    let win = gaussian_window(WINDOW, 1.5);
    let mu1 = filter_valid(x, &win, WINDOW);
    let mu2 = filter_valid(y, &win, WINDOW);
    let xx = Plane {
        data: x.data.iter().map(|&v| v * v).collect(),
        h: x.h,
        w: x.w,
    };
    let yy = Plane {
        data: y.data.iter().map(|&v| v * v).collect(),
        h: y.h,
        w: y.w,
    };
    let xy = Plane {
        data: x.data.iter().zip(y.data.iter()).map(|(&a, &b)| a * b).collect(),
        h: x.h,
        w: x.w,
    };
    let sxx = filter_valid(&xx, &win, WINDOW);
    let syy = filter_valid(&yy, &win, WINDOW);
    let sxy = filter_valid(&xy, &win, WINDOW);

    // Contrast sensitivity at this frequency; the mapping's midpoint and
    // spread follow the published model.
    let csf = 100.0 * 2.6 * (0.0192 + 0.114 * sf) * fmath::exp(-fmath::powf(0.114 * sf, 1.1));
    let u = 128.0 / (1.4 * csf);
    let sig = u / 3.0;

    let mut total = 0.0;
    for i in 0..mu1.len() {
        let s1 = fmath::sqrt((sxx[i] - mu1[i] * mu1[i]).max(0.0));
        let s2 = fmath::sqrt((syy[i] - mu2[i] * mu2[i]).max(0.0));
        let s12 = sxy[i] - mu1[i] * mu2[i];
        let p1 = fmath::normal_cdf(s1, u, sig);
        let p2 = fmath::normal_cdf(s2, u, sig);
        let first = (2.0 * p1 * p2 + C1) / (p1 * p1 + p2 * p2 + C1);
        let second = (s12 + C2) / (s1 * s2 + C2);
        total += first * second;
    }
    (total / mu1.len() as f64).clamp(0.0, 1.0)
}

fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let log_beta = fmath::lgamma(a) + fmath::lgamma(b) - fmath::lgamma(a + b);
    fmath::exp((a - 1.0) * fmath::ln(x.max(1e-300)) + (b - 1.0) * fmath::ln((1.0 - x).max(1e-300)) - log_beta)
}

/// Statistical naturalness of the `[0, 255]` luminance: the product of a
/// Gaussian prior on global mean and a Beta prior on mean local contrast,
/// each normalized by its mode.
fn naturalness(p: &Plane) -> f64 {
    let n = p.data.len() as f64;
    let mean = p.data.iter().sum::<f64>() / n;

    // Mean of per-block sample standard deviations over an 11x11 tiling
    // (partial edge blocks included).
    let mut sig_sum = 0.0;
    let mut blocks = 0.0;
    let mut by = 0;
    while by < p.h {
        let bh = WINDOW.min(p.h - by);
        let mut bx = 0;
        while bx < p.w {
            let bw = WINDOW.min(p.w - bx);
            let cnt = (bh * bw) as f64;
            let mut s = 0.0;
            for y in 0..bh {
                for x in 0..bw {
                    s += p.data[(by + y) * p.w + bx + x];
                }
            }
            let m = s / cnt;
            let mut var = 0.0;
            for y in 0..bh {
                for x in 0..bw {
                    let d = p.data[(by + y) * p.w + bx + x] - m;
                    var += d * d;
                }
            }
            let std = if cnt > 1.0 {
                fmath::sqrt(var / (cnt - 1.0))
            } else {
                0.0
            };
            sig_sum += std;
            blocks += 1.0;
            bx += WINDOW;
        }
        by += WINDOW;
    }
    let sig = sig_sum / blocks;

    let pm = fmath::exp(-(mean - 115.94) * (mean - 115.94) / (2.0 * 27.99 * 27.99));
    let beta_mode = (4.4 - 1.0) / (4.4 + 10.1 - 2.0);
    let pd = beta_pdf(sig / 64.29, 4.4, 10.1) / beta_pdf(beta_mode, 4.4, 10.1);
    (pm * pd).clamp(0.0, 1.0)
}

/// The index itself: `a * S^alpha + (1 - a) * N^beta` with up to five scales
/// of structural fidelity (reduced and renormalized for small images).
pub fn tmqi(f: &Tensor, r: &Tensor) -> CoreResult<f64> {
    f.check_same_shape(r, "tmqi inputs")?;
    let mut x = luma255_plane(r);
    let mut y = luma255_plane(f);

    let mut scales = 0usize;
    let mut dim = x.h.min(x.w);
    while scales < 5 && dim >= WINDOW {
        scales += 1;
        dim /= 2;
    }
    if scales == 0 {
        return Err(CoreError::ImageTooSmall {
            need: WINDOW,
            h: x.h,
            w: x.w,
        });
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut s = 1.0;
    for k in 0..scales {
        let sf = 32.0 / fmath::powf(2.0, k as f64);
        let sk = structural_fidelity(&x, &y, sf);
        s *= fmath::powf(sk, MS_SSIM_WEIGHTS[k] / wsum);
        if k + 1 < scales {
            x = downsample2(&x);
            y = downsample2(&y);
        }
    }
    let n = naturalness(&luma255_plane(f));
    Ok(A * fmath::powf(s, ALPHA) + (1.0 - A) * fmath::powf(n, BETA))
}
