//! SSIM machinery: Gaussian-window SSIM, its analytic input gradient, the
//! multi-scale variant used by the metrics, and the multi-exposure MEF-SSIM.
//!
//! All routines work on the `[0, 1]` pixel domain (dynamic range 1) and
//! aggregate over the valid window positions only, per channel, then average
//! across channels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::fmath;
use crate::tensor::Tensor;

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_C1: f64 = SSIM_K1 * SSIM_K1;
pub const SSIM_C2: f64 = SSIM_K2 * SSIM_K2;

/// Window configuration for the SSIM family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
        }
    }
}

impl SsimConfig {
    pub fn with_window(window: usize) -> Self {
        SsimConfig {
            window,
            sigma: 1.5,
        }
    }
}

/// Normalized 2-D Gaussian window, row-major `side x side`.
pub fn gaussian_window(side: usize, sigma: f64) -> Vec<f64> {
    assert!(side >= 1);
    let half = (side - 1) as f64 / 2.0;
    let mut w = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            w.push(fmath::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode correlation of a plane with a `side x side` window.
fn valid_corr(plane: &[f64], h: usize, w: usize, win: &[f64], side: usize) -> Vec<f64> {
    let oh = h - side + 1;
    let ow = w - side + 1;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for ky in 0..side {
                let row = &plane[(y + ky) * w + x..(y + ky) * w + x + side];
                let wrow = &win[ky * side..(ky + 1) * side];
                for (pv, wv) in row.iter().zip(wrow.iter()) {
                    acc += pv * wv;
                }
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`valid_corr`]: scatter a valid-size map back into the plane.
fn valid_corr_adjoint(
    map: &[f64],
    h: usize,
    w: usize,
    win: &[f64],
    side: usize,
    out: &mut [f64],
) {
    let oh = h - side + 1;
    let ow = w - side + 1;
    for y in 0..oh {
        for x in 0..ow {
            let g = map[y * ow + x];
            if g == 0.0 {
                continue;
            }
            for ky in 0..side {
                let orow = &mut out[(y + ky) * w + x..(y + ky) * w + x + side];
                let wrow = &win[ky * side..(ky + 1) * side];
                for (ov, wv) in orow.iter_mut().zip(wrow.iter()) {
                    *ov += g * wv;
                }
            }
        }
    }
}

fn check_pair(x: &Tensor, y: &Tensor, window: usize) -> CoreResult<()> {
    x.check_same_shape(y, "ssim inputs")?;
    if x.height() < window || x.width() < window {
        return Err(CoreError::ImageTooSmall {
            need: window,
            h: x.height(),
            w: x.width(),
        });
    }
    Ok(())
}

/// Mean SSIM and mean contrast-structure term over all channels.
///
/// The `cs` component is what the coarse scales of MS-SSIM consume.
pub fn ssim_components(x: &Tensor, y: &Tensor, cfg: SsimConfig) -> CoreResult<(f64, f64)> {
    check_pair(x, y, cfg.window)?;
    let win = gaussian_window(cfg.window, cfg.sigma);
    let (h, w) = (x.height(), x.width());
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    let mut count = 0usize;
    for c in 0..x.channels() {
        let xp = x.plane(c);
        let yp = y.plane(c);
        let x2: Vec<f64> = xp.iter().map(|&v| v * v).collect();
        let y2: Vec<f64> = yp.iter().map(|&v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(yp.iter()).map(|(&a, &b)| a * b).collect();
        let mu_x = valid_corr(xp, h, w, &win, cfg.window);
        let mu_y = valid_corr(yp, h, w, &win, cfg.window);
        let wx2 = valid_corr(&x2, h, w, &win, cfg.window);
        let wy2 = valid_corr(&y2, h, w, &win, cfg.window);
        let wxy = valid_corr(&xy, h, w, &win, cfg.window);
        for i in 0..mu_x.len() {
            let (m1, m2) = (mu_x[i], mu_y[i]);
            let sx = wx2[i] - m1 * m1;
            let sy = wy2[i] - m2 * m2;
            let sxy = wxy[i] - m1 * m2;
            let l = (2.0 * m1 * m2 + SSIM_C1) / (m1 * m1 + m2 * m2 + SSIM_C1);
            let cs = (2.0 * sxy + SSIM_C2) / (sx + sy + SSIM_C2);
            ssim_sum += l * cs;
            cs_sum += cs;
        }
        count += mu_x.len();
    }
    Ok((ssim_sum / count as f64, cs_sum / count as f64))
}

/// Mean SSIM over valid positions and channels.
pub fn ssim_mean(x: &Tensor, y: &Tensor, cfg: SsimConfig) -> CoreResult<f64> {
    Ok(ssim_components(x, y, cfg)?.0)
}

/// Mean SSIM plus its gradient with respect to `x`.
pub fn ssim_mean_with_grad(x: &Tensor, y: &Tensor, cfg: SsimConfig) -> CoreResult<(f64, Tensor)> {
    check_pair(x, y, cfg.window)?;
    let win = gaussian_window(cfg.window, cfg.sigma);
    let (h, w) = (x.height(), x.width());
    let oh = h - cfg.window + 1;
    let ow = w - cfg.window + 1;
    let count = (x.channels() * oh * ow) as f64;
    let mut grad = Tensor::zeros(x.channels(), h, w);
    let mut ssim_sum = 0.0;
    for c in 0..x.channels() {
        let xp = x.plane(c);
        let yp = y.plane(c);
        let x2: Vec<f64> = xp.iter().map(|&v| v * v).collect();
        let y2: Vec<f64> = yp.iter().map(|&v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(yp.iter()).map(|(&a, &b)| a * b).collect();
        let mu_x = valid_corr(xp, h, w, &win, cfg.window);
        let mu_y = valid_corr(yp, h, w, &win, cfg.window);
        let wx2 = valid_corr(&x2, h, w, &win, cfg.window);
        let wy2 = valid_corr(&y2, h, w, &win, cfg.window);
        let wxy = valid_corr(&xy, h, w, &win, cfg.window);
        // Per-position partials of SSIM w.r.t. mu_x, w*(x^2), w*(xy).
        let mut d_mu = vec![0.0; mu_x.len()];
        let mut d_wx2 = vec![0.0; mu_x.len()];
        let mut d_wxy = vec![0.0; mu_x.len()];
        for i in 0..mu_x.len() {
            let (m1, m2) = (mu_x[i], mu_y[i]);
            let sx = wx2[i] - m1 * m1;
            let sy = wy2[i] - m2 * m2;
            let sxy = wxy[i] - m1 * m2;
            let den_l = m1 * m1 + m2 * m2 + SSIM_C1;
            let den_cs = sx + sy + SSIM_C2;
            let num_l = 2.0 * m1 * m2 + SSIM_C1;
            let num_cs = 2.0 * sxy + SSIM_C2;
            let l = num_l / den_l;
            let cs = num_cs / den_cs;
            ssim_sum += l * cs;

            let dl_dm1 = (2.0 * m2 * den_l - num_l * 2.0 * m1) / (den_l * den_l);
            // cs depends on m1 through sx = wx2 - m1^2 and sxy = wxy - m1*m2.
            let dcs_dsx = -num_cs / (den_cs * den_cs);
            let dcs_dsxy = 2.0 / den_cs;
            let dcs_dm1 = dcs_dsx * (-2.0 * m1) + dcs_dsxy * (-m2);
            d_mu[i] = dl_dm1 * cs + l * dcs_dm1;
            d_wx2[i] = l * dcs_dsx;
            d_wxy[i] = l * dcs_dsxy;
        }
        // Chain through the window correlations.
        let gp = grad.plane_mut(c);
        let mut acc_mu = vec![0.0; h * w];
        let mut acc_wx2 = vec![0.0; h * w];
        let mut acc_wxy = vec![0.0; h * w];
        valid_corr_adjoint(&d_mu, h, w, &win, cfg.window, &mut acc_mu);
        valid_corr_adjoint(&d_wx2, h, w, &win, cfg.window, &mut acc_wx2);
        valid_corr_adjoint(&d_wxy, h, w, &win, cfg.window, &mut acc_wxy);
        for q in 0..h * w {
            gp[q] = (acc_mu[q] + acc_wx2[q] * 2.0 * xp[q] + acc_wxy[q] * yp[q]) / count;
        }
    }
    Ok((ssim_sum / count, grad))
}

/// Box-window MEF-SSIM configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MefSsimConfig {
    /// Side of the square sliding patch.
    pub patch: usize,
    /// Stride of the sliding patch.
    pub stride: usize,
}

impl Default for MefSsimConfig {
    fn default() -> Self {
        MefSsimConfig { patch: 8, stride: 1 }
    }
}

/// MEF-SSIM of a fused image against its two sources.
///
/// For every sliding patch a desired signal is assembled from the source
/// patches: its strength is the largest mean-removed source strength, its
/// structure the strength-weighted average of the source structures. The
/// fused patch is then scored with the contrast-structure term of SSIM.
pub fn mef_ssim(fused: &Tensor, under: &Tensor, over: &Tensor, cfg: MefSsimConfig) -> CoreResult<f64> {
    mef_ssim_impl(fused, under, over, cfg, false).map(|(v, _)| v)
}

/// MEF-SSIM plus its gradient with respect to the fused image.
pub fn mef_ssim_with_grad(
    fused: &Tensor,
    under: &Tensor,
    over: &Tensor,
    cfg: MefSsimConfig,
) -> CoreResult<(f64, Tensor)> {
    let (v, g) = mef_ssim_impl(fused, under, over, cfg, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn mef_ssim_impl(
    fused: &Tensor,
    under: &Tensor,
    over: &Tensor,
    cfg: MefSsimConfig,
    want_grad: bool,
) -> CoreResult<(f64, Option<Tensor>)> {
    fused.check_same_shape(under, "mef-ssim fused vs under")?;
    fused.check_same_shape(over, "mef-ssim fused vs over")?;
    let (h, w) = (fused.height(), fused.width());
    if h < cfg.patch || w < cfg.patch {
        return Err(CoreError::ImageTooSmall {
            need: cfg.patch,
            h,
            w,
        });
    }
    let side = cfg.patch;
    let n = (side * side) as f64;
    let c2 = SSIM_C2;
    let mut grad = if want_grad {
        Some(Tensor::zeros(fused.channels(), h, w))
    } else {
        None
    };
    let mut sum = 0.0;
    let mut patches = 0usize;
    let mut xu = vec![0.0; side * side];
    let mut xo = vec![0.0; side * side];
    let mut yf = vec![0.0; side * side];
    for c in 0..fused.channels() {
        let up = under.plane(c);
        let op = over.plane(c);
        let fp = fused.plane(c);
        let mut y0 = 0;
        while y0 + side <= h {
            let mut x0 = 0;
            while x0 + side <= w {
                for ky in 0..side {
                    for kx in 0..side {
                        let idx = (y0 + ky) * w + x0 + kx;
                        xu[ky * side + kx] = up[idx];
                        xo[ky * side + kx] = op[idx];
                        yf[ky * side + kx] = fp[idx];
                    }
                }
                let mu_u = xu.iter().sum::<f64>() / n;
                let mu_o = xo.iter().sum::<f64>() / n;
                let mu_f = yf.iter().sum::<f64>() / n;
                // Desired patch: strength of the strongest source, structure
                // from the strength-weighted structure average, which reduces
                // to the sum of the mean-removed sources.
                let mut cu = 0.0;
                let mut co = 0.0;
                let mut vnorm = 0.0;
                for i in 0..side * side {
                    let du = xu[i] - mu_u;
                    let dv = xo[i] - mu_o;
                    cu += du * du;
                    co += dv * dv;
                    let s = du + dv;
                    vnorm += s * s;
                }
                cu = fmath::sqrt(cu);
                co = fmath::sqrt(co);
                vnorm = fmath::sqrt(vnorm);
                let chat = cu.max(co);
                let scale = if vnorm > 0.0 { chat / vnorm } else { 0.0 };

                let mut a = 0.0; // <xhat, ytilde>/n
                let mut bx = 0.0; // ||xhat||^2/n
                let mut by = 0.0; // ||ytilde||^2/n
                for i in 0..side * side {
                    let xhat = scale * ((xu[i] - mu_u) + (xo[i] - mu_o));
                    let yt = yf[i] - mu_f;
                    a += xhat * yt;
                    bx += xhat * xhat;
                    by += yt * yt;
                }
                a /= n;
                bx /= n;
                by /= n;
                let den = bx + by + c2;
                let score = (2.0 * a + c2) / den;
                sum += score;
                patches += 1;

                if let Some(g) = grad.as_mut() {
                    // d score / d ytilde_i = (2 xhat_i / n * den - num * 2 yt_i / n) / den^2
                    let num = 2.0 * a + c2;
                    let inv_den2 = 1.0 / (den * den);
                    let mut gsum = 0.0;
                    let mut gtmp = vec![0.0; side * side];
                    for i in 0..side * side {
                        let xhat = scale * ((xu[i] - mu_u) + (xo[i] - mu_o));
                        let yt = yf[i] - mu_f;
                        let gi = (2.0 * xhat / n * den - num * 2.0 * yt / n) * inv_den2;
                        gtmp[i] = gi;
                        gsum += gi;
                    }
                    let gmean = gsum / n;
                    let gp = g.plane_mut(c);
                    for ky in 0..side {
                        for kx in 0..side {
                            gp[(y0 + ky) * w + x0 + kx] += gtmp[ky * side + kx] - gmean;
                        }
                    }
                }
                x0 += cfg.stride;
            }
            y0 += cfg.stride;
        }
    }
    let total = patches as f64;
    if let Some(g) = grad.as_mut() {
        g.scale(1.0 / total);
    }
    Ok((sum / total, grad))
}

/// Average-pool a tensor by 2 in both spatial dimensions (floor semantics).
pub fn downsample2(x: &Tensor) -> Tensor {
    let nh = x.height() / 2;
    let nw = x.width() / 2;
    let mut out = Tensor::zeros(x.channels(), nh, nw);
    for c in 0..x.channels() {
        for y in 0..nh {
            for xx in 0..nw {
                let v = 0.25
                    * (x.get(c, 2 * y, 2 * xx)
                        + x.get(c, 2 * y, 2 * xx + 1)
                        + x.get(c, 2 * y + 1, 2 * xx)
                        + x.get(c, 2 * y + 1, 2 * xx + 1));
                out.set(c, y, xx, v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::rng;
    use rand::Rng as _;

    fn noise(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "ssim-test", &[]);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_images_score_exactly_one() {
        let x = noise(3, 16, 16, 1);
        let s = ssim_mean(&x, &x, SsimConfig::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn too_small_image_errors() {
        let x = noise(1, 8, 8, 2);
        assert!(matches!(
            ssim_mean(&x, &x, SsimConfig::default()),
            Err(CoreError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gaussian_window_normalized() {
        let w = gaussian_window(11, 1.5);
        let s: f64 = w.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        // symmetric
        assert!((w[0] - w[120]).abs() < 1e-15);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let x = noise(1, 12, 12, 3);
        let y = noise(1, 12, 12, 4);
        let cfg = SsimConfig::with_window(7);
        let (_, g) = ssim_mean_with_grad(&x, &y, cfg).unwrap();
        let res = check_gradient(x.data(), g.data(), 1e-6, 1e-4, |vals| {
            let xt = Tensor::from_vec(1, 12, 12, vals.to_vec()).unwrap();
            ssim_mean(&xt, &y, cfg).unwrap()
        });
        assert!(res.max_rel_err < 1e-6, "{res:?}");
    }

    #[test]
    fn mef_ssim_identity_is_one() {
        let x = noise(1, 16, 16, 5);
        let s = mef_ssim(&x, &x, &x, MefSsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn mef_ssim_gradient_matches_finite_differences() {
        let u = noise(1, 10, 10, 6);
        let o = noise(1, 10, 10, 7);
        let f = noise(1, 10, 10, 8);
        let cfg = MefSsimConfig { patch: 6, stride: 2 };
        let (_, g) = mef_ssim_with_grad(&f, &u, &o, cfg).unwrap();
        let res = check_gradient(f.data(), g.data(), 1e-6, 1e-4, |vals| {
            let ft = Tensor::from_vec(1, 10, 10, vals.to_vec()).unwrap();
            mef_ssim(&ft, &u, &o, cfg).unwrap()
        });
        assert!(res.max_rel_err < 1e-6, "{res:?}");
    }

    #[test]
    fn downsample_halves_dimensions() {
        let x = noise(2, 10, 14, 9);
        let d = downsample2(&x);
        assert_eq!(d.shape(), (2, 5, 7));
        let v = 0.25 * (x.get(0, 0, 0) + x.get(0, 0, 1) + x.get(0, 1, 0) + x.get(0, 1, 1));
        assert!((d.get(0, 0, 0) - v).abs() < 1e-15);
    }
}
