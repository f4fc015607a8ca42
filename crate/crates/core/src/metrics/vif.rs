//! Pixel-domain visual information fidelity, adapted to fusion by summing
//! the fidelity of the fused image against each source.

use alloc::vec::Vec;

use crate::data::ExposurePair;
use crate::error::{CoreError, CoreResult};
use crate::fmath;
use crate::ssim::gaussian_window;
use crate::tensor::{luminance, Tensor};

const SIGMA_NSQ: f64 = 2.0;
const EPS: f64 = 1e-10;

struct Plane {
    data: Vec<f64>,
    h: usize,
    w: usize,
}

fn filter_valid(p: &Plane, win: &[f64], side: usize) -> Plane {
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
    Plane {
        data: out,
        h: oh,
        w: ow,
    }
}

fn decimate2(p: &Plane) -> Plane {
    let oh = p.h.div_ceil(2);
    let ow = p.w.div_ceil(2);
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = p.data[(2 * y) * p.w + 2 * x];
        }
    }
    Plane {
        data: out,
        h: oh,
        w: ow,
    }
}

fn mul(a: &Plane, b: &Plane) -> Plane {
    Plane {
        data: a.data.iter().zip(b.data.iter()).map(|(&x, &y)| x * y).collect(),
        h: a.h,
        w: a.w,
    }
}

/// Single-pair pixel-domain VIF of `dist` against `reference`, both given as
/// `[0, 255]` luminance planes.
fn vifp(reference: &Plane, dist: &Plane) -> CoreResult<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut r = Plane {
        data: reference.data.clone(),
        h: reference.h,
        w: reference.w,
    };
    let mut d = Plane {
        data: dist.data.clone(),
        h: dist.h,
        w: dist.w,
    };
    for scale in 1..=4usize {
        let side = (1usize << (4 - scale + 1)) + 1;
        let win = gaussian_window(side, side as f64 / 5.0);
        if scale > 1 {
            if r.h < side || r.w < side {
                return Err(CoreError::ImageTooSmall {
                    need: side,
                    h: r.h,
                    w: r.w,
                });
            }
            r = decimate2(&filter_valid(&r, &win, side));
            d = decimate2(&filter_valid(&d, &win, side));
        }
        if r.h < side || r.w < side {
            return Err(CoreError::ImageTooSmall {
                need: side,
                h: r.h,
                w: r.w,
            });
        }
        let mu1 = filter_valid(&r, &win, side);
        let mu2 = filter_valid(&d, &win, side);
        let rr = filter_valid(&mul(&r, &r), &win, side);
        let dd = filter_valid(&mul(&d, &d), &win, side);
        let rd = filter_valid(&mul(&r, &d), &win, side);
        for i in 0..mu1.data.len() {
            let m1 = mu1.data[i];
            let m2 = mu2.data[i];
            let sigma1_sq = (rr.data[i] - m1 * m1).max(0.0);
            let sigma2_sq = (dd.data[i] - m2 * m2).max(0.0);
            let sigma12 = rd.data[i] - m1 * m2;

            let mut g = sigma12 / (sigma1_sq + EPS);
            let mut sv_sq = sigma2_sq - g * sigma12;
            let mut s1 = sigma1_sq;
            if sigma1_sq < EPS {
                g = 0.0;
                sv_sq = sigma2_sq;
                s1 = 0.0;
            }
            if sigma2_sq < EPS {
                g = 0.0;
                sv_sq = 0.0;
            }
            if g < 0.0 {
                sv_sq = sigma2_sq;
                g = 0.0;
            }
            if sv_sq < EPS {
                sv_sq = EPS;
            }
            num += fmath::log10(1.0 + g * g * s1 / (sv_sq + SIGMA_NSQ));
            den += fmath::log10(1.0 + s1 / SIGMA_NSQ);
        }
    }
    if den == 0.0 {
        // Structureless reference carries no information to preserve.
        return Ok(0.0);
    }
    Ok(num / den)
}

fn plane_of(img: &Tensor) -> Plane {
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

/// Fusion VIF: the pixel-domain VIF of the fused image measured against each
/// source in turn, summed. Identical images score 1 per source.
pub fn vif(f: &Tensor, pair: &ExposurePair) -> CoreResult<f64> {
    f.check_same_shape(&pair.under, "vif inputs")?;
    let fp = plane_of(f);
    let up = plane_of(&pair.under);
    let op = plane_of(&pair.over);
    Ok(vifp(&up, &fp)? + vifp(&op, &fp)?)
}
