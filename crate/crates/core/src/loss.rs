//! The searchable training loss: an enumerated candidate set combined by
//! simplex weights derived from the loss logits.
//!
//! Candidates are `(family, reference)` pairs. Reference-requiring
//! candidates are masked (not errored) when the pair carries no reference
//! image; the surviving weights renormalize, which equals a softmax over the
//! surviving logits.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::ExposurePair;
use crate::error::{CoreError, CoreResult};
use crate::extractor::FeatureExtractor;
use crate::fmath;
use crate::ssim::{self, MefSsimConfig, SsimConfig};
use crate::tensor::Tensor;

/// Loss families of the candidate space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    L1,
    L2,
    Ssim,
    MefSsim,
    Grad,
    Perc,
    Psnr,
    Color,
    Tv,
}

/// What a candidate compares the fused image against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefKind {
    Over,
    Under,
    Reference,
    MaxGradPair,
    SourcePair,
    None,
}

/// One point of the loss search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossCandidate {
    pub family: LossFamily,
    pub reference: RefKind,
}

/// The canonical candidate order. Exactly 17 entries.
pub const CATALOG: [LossCandidate; 17] = [
    LossCandidate { family: LossFamily::L1, reference: RefKind::Over },
    LossCandidate { family: LossFamily::L1, reference: RefKind::Under },
    LossCandidate { family: LossFamily::L1, reference: RefKind::Reference },
    LossCandidate { family: LossFamily::L2, reference: RefKind::Over },
    LossCandidate { family: LossFamily::L2, reference: RefKind::Under },
    LossCandidate { family: LossFamily::L2, reference: RefKind::Reference },
    LossCandidate { family: LossFamily::Ssim, reference: RefKind::Over },
    LossCandidate { family: LossFamily::Ssim, reference: RefKind::Under },
    LossCandidate { family: LossFamily::Ssim, reference: RefKind::Reference },
    LossCandidate { family: LossFamily::MefSsim, reference: RefKind::SourcePair },
    LossCandidate { family: LossFamily::Grad, reference: RefKind::MaxGradPair },
    LossCandidate { family: LossFamily::Perc, reference: RefKind::Over },
    LossCandidate { family: LossFamily::Perc, reference: RefKind::Under },
    LossCandidate { family: LossFamily::Perc, reference: RefKind::Reference },
    LossCandidate { family: LossFamily::Psnr, reference: RefKind::Reference },
    LossCandidate { family: LossFamily::Color, reference: RefKind::Reference },
    LossCandidate { family: LossFamily::Tv, reference: RefKind::None },
];

impl LossCandidate {
    /// Stable human-readable name used in reports.
    pub fn name(&self) -> &'static str {
        match (self.family, self.reference) {
            (LossFamily::L1, RefKind::Over) => "l1_over",
            (LossFamily::L1, RefKind::Under) => "l1_under",
            (LossFamily::L1, RefKind::Reference) => "l1_ref",
            (LossFamily::L2, RefKind::Over) => "l2_over",
            (LossFamily::L2, RefKind::Under) => "l2_under",
            (LossFamily::L2, RefKind::Reference) => "l2_ref",
            (LossFamily::Ssim, RefKind::Over) => "ssim_over",
            (LossFamily::Ssim, RefKind::Under) => "ssim_under",
            (LossFamily::Ssim, RefKind::Reference) => "ssim_ref",
            (LossFamily::MefSsim, RefKind::SourcePair) => "mef_ssim",
            (LossFamily::Grad, RefKind::MaxGradPair) => "grad",
            (LossFamily::Perc, RefKind::Over) => "perc_over",
            (LossFamily::Perc, RefKind::Under) => "perc_under",
            (LossFamily::Perc, RefKind::Reference) => "perc_ref",
            (LossFamily::Psnr, RefKind::Reference) => "psnr_ref",
            (LossFamily::Color, RefKind::Reference) => "color_ref",
            (LossFamily::Tv, RefKind::None) => "tv",
            _ => "invalid",
        }
    }

    fn needs_reference(&self) -> bool {
        self.reference == RefKind::Reference
    }
}

/// Logits over the candidate space; weights are their softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub beta: Vec<f64>,
}

impl LossParams {
    pub fn uniform() -> Self {
        LossParams {
            beta: vec![0.0; CATALOG.len()],
        }
    }

    /// Softmax over all logits.
    pub fn weights(&self) -> Vec<f64> {
        fmath::softmax(&self.beta)
    }
}

/// Shared evaluation context: the frozen extractor and window settings.
#[derive(Clone, Copy)]
pub struct LossCtx<'a> {
    pub extractor: &'a FeatureExtractor,
    pub ssim: SsimConfig,
    pub mef: MefSsimConfig,
}

impl<'a> LossCtx<'a> {
    pub fn new(extractor: &'a FeatureExtractor) -> Self {
        LossCtx {
            extractor,
            ssim: SsimConfig::default(),
            mef: MefSsimConfig::default(),
        }
    }
}

/// Mean absolute (`norm = 1`) or mean squared (`norm = 2`) error.
pub fn pixel_loss(f: &Tensor, r: &Tensor, norm: u8) -> CoreResult<f64> {
    f.check_same_shape(r, "pixel loss")?;
    let n = f.len() as f64;
    let sum: f64 = f
        .data()
        .iter()
        .zip(r.data().iter())
        .map(|(&a, &b)| {
            let d = a - b;
            if norm == 1 {
                d.abs()
            } else {
                d * d
            }
        })
        .sum();
    Ok(sum / n)
}

pub fn pixel_loss_grad(f: &Tensor, r: &Tensor, norm: u8) -> CoreResult<(f64, Tensor)> {
    let v = pixel_loss(f, r, norm)?;
    let n = f.len() as f64;
    let g = f.zip(r, |a, b| {
        let d = a - b;
        if norm == 1 {
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        } else {
            2.0 * d / n
        }
    });
    Ok((v, g))
}

/// `1 - mean SSIM` with the context's Gaussian window.
pub fn ssim_loss(f: &Tensor, r: &Tensor, cfg: SsimConfig) -> CoreResult<f64> {
    Ok(1.0 - ssim::ssim_mean(f, r, cfg)?)
}

pub fn ssim_loss_grad(f: &Tensor, r: &Tensor, cfg: SsimConfig) -> CoreResult<(f64, Tensor)> {
    let (s, mut g) = ssim::ssim_mean_with_grad(f, r, cfg)?;
    g.scale(-1.0);
    Ok((1.0 - s, g))
}

/// `1 - MEF-SSIM` against the source pair.
pub fn mef_ssim_loss(f: &Tensor, pair: &ExposurePair, cfg: MefSsimConfig) -> CoreResult<f64> {
    Ok(1.0 - ssim::mef_ssim(f, &pair.under, &pair.over, cfg)?)
}

pub fn mef_ssim_loss_grad(
    f: &Tensor,
    pair: &ExposurePair,
    cfg: MefSsimConfig,
) -> CoreResult<(f64, Tensor)> {
    let (s, mut g) = ssim::mef_ssim_with_grad(f, &pair.under, &pair.over, cfg)?;
    g.scale(-1.0);
    Ok((1.0 - s, g))
}

/// Smoothing constant inside the Sobel magnitude square root.
const GRAD_EPS: f64 = 1e-12;

/// Per-channel Sobel gradients `(gx, gy)` with replicated borders, so
/// constant images have exactly zero gradient everywhere.
fn sobel(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        plane[y * w + x]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) - at(y - 1, x - 1))
                + 2.0 * (at(y, x + 1) - at(y, x - 1))
                + (at(y + 1, x + 1) - at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) - at(y - 1, x - 1))
                + 2.0 * (at(y + 1, x) - at(y - 1, x))
                + (at(y + 1, x + 1) - at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// Adjoint of [`sobel`]: scatter `(dgx, dgy)` back into the plane, with the
/// replicated-border reads routed back to the clamped cells.
fn sobel_adjoint(dgx: &[f64], dgy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut add = |y: isize, x: isize, v: f64| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        out[y * w + x] += v;
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let (dx, dy) = (dgx[i], dgy[i]);
            if dx != 0.0 {
                add(y - 1, x - 1, -dx);
                add(y - 1, x + 1, dx);
                add(y, x - 1, -2.0 * dx);
                add(y, x + 1, 2.0 * dx);
                add(y + 1, x - 1, -dx);
                add(y + 1, x + 1, dx);
            }
            if dy != 0.0 {
                add(y - 1, x - 1, -dy);
                add(y - 1, x, -2.0 * dy);
                add(y - 1, x + 1, -dy);
                add(y + 1, x - 1, dy);
                add(y + 1, x, 2.0 * dy);
                add(y + 1, x + 1, dy);
            }
        }
    }
    out
}

/// Sobel gradient magnitude per pixel of one plane.
fn sobel_magnitude(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (gx, gy) = sobel(plane, h, w);
    gx.iter()
        .zip(gy.iter())
        .map(|(&a, &b)| fmath::sqrt(a * a + b * b + GRAD_EPS))
        .collect()
}

/// Mean L1 between the fused Sobel magnitude and the elementwise maximum of
/// the two source magnitudes.
pub fn grad_loss(f: &Tensor, pair: &ExposurePair) -> CoreResult<f64> {
    Ok(grad_loss_impl(f, pair, false)?.0)
}

pub fn grad_loss_grad(f: &Tensor, pair: &ExposurePair) -> CoreResult<(f64, Tensor)> {
    let (v, g) = grad_loss_impl(f, pair, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn grad_loss_impl(
    f: &Tensor,
    pair: &ExposurePair,
    want_grad: bool,
) -> CoreResult<(f64, Option<Tensor>)> {
    f.check_same_shape(&pair.under, "grad loss")?;
    let (h, w) = (f.height(), f.width());
    let n = (f.channels() * h * w) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Tensor::zeros(f.channels(), h, w));
    for c in 0..f.channels() {
        let mu = sobel_magnitude(pair.under.plane(c), h, w);
        let mo = sobel_magnitude(pair.over.plane(c), h, w);
        let (gx, gy) = sobel(f.plane(c), h, w);
        let mf: Vec<f64> = gx
            .iter()
            .zip(gy.iter())
            .map(|(&a, &b)| fmath::sqrt(a * a + b * b + GRAD_EPS))
            .collect();
        for i in 0..h * w {
            total += (mf[i] - mu[i].max(mo[i])).abs();
        }
        if let Some(g) = grad.as_mut() {
            // d|mf - t|/d(gx, gy) = sign * (gx, gy)/mf, then Sobel adjoint.
            let mut dgx = vec![0.0; h * w];
            let mut dgy = vec![0.0; h * w];
            for i in 0..h * w {
                let t = mu[i].max(mo[i]);
                let d = mf[i] - t;
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                } / n;
                dgx[i] = s * gx[i] / mf[i];
                dgy[i] = s * gy[i] / mf[i];
            }
            let dplane = sobel_adjoint(&dgx, &dgy, h, w);
            let gp = g.plane_mut(c);
            for (o, v) in gp.iter_mut().zip(dplane.iter()) {
                *o += v;
            }
        }
    }
    Ok((total / n, grad))
}

/// Sum over extractor taps of the mean squared feature difference.
pub fn perceptual_loss(f: &Tensor, r: &Tensor, extractor: &FeatureExtractor) -> CoreResult<f64> {
    f.check_same_shape(r, "perceptual loss")?;
    let ff = extractor.extract(f)?;
    let fr = extractor.extract(r)?;
    Ok(ff
        .iter()
        .zip(fr.iter())
        .map(|(a, b)| {
            let n = a.len() as f64;
            a.data()
                .iter()
                .zip(b.data().iter())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<f64>()
                / n
        })
        .sum())
}

pub fn perceptual_loss_grad(
    f: &Tensor,
    r: &Tensor,
    extractor: &FeatureExtractor,
) -> CoreResult<(f64, Tensor)> {
    f.check_same_shape(r, "perceptual loss")?;
    let (ff, cache) = extractor.extract_cached(f)?;
    let fr = extractor.extract(r)?;
    let mut value = 0.0;
    let mut dtaps = Vec::with_capacity(ff.len());
    for (a, b) in ff.iter().zip(fr.iter()) {
        let n = a.len() as f64;
        let d = a.zip(b, |x, y| 2.0 * (x - y) / n);
        value += a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        dtaps.push(d);
    }
    let grad = extractor.backward(&cache, &dtaps);
    Ok((value, grad))
}

/// PSNR cap in dB; reached when the MSE underflows `1e-10`.
pub const PSNR_CAP: f64 = 100.0;

/// `-min(10 log10(1 / MSE), 100)`.
pub fn psnr_loss(f: &Tensor, r: &Tensor) -> CoreResult<f64> {
    f.check_same_shape(r, "psnr loss")?;
    let mse = pixel_loss(f, r, 2)?;
    let psnr = if mse <= 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * fmath::log10(1.0 / mse)).min(PSNR_CAP)
    };
    Ok(-psnr)
}

pub fn psnr_loss_grad(f: &Tensor, r: &Tensor) -> CoreResult<(f64, Tensor)> {
    let v = psnr_loss(f, r)?;
    let mse = pixel_loss(f, r, 2)?;
    let n = f.len() as f64;
    if mse <= 1e-10 || v <= -PSNR_CAP {
        return Ok((v, Tensor::zeros(f.channels(), f.height(), f.width())));
    }
    // d(-psnr)/d mse = 10 / (ln 10 * mse); d mse/d f = 2 (f - r)/n.
    let k = 10.0 / (core::f64::consts::LN_10 * mse);
    let g = f.zip(r, |a, b| k * 2.0 * (a - b) / n);
    Ok((v, g))
}

/// Pixels whose RGB vector norm falls below this contribute zero angle.
const COLOR_EPS: f64 = 1e-6;

/// Mean angle (radians) between the RGB vectors of `f` and `r`.
pub fn color_loss(f: &Tensor, r: &Tensor) -> CoreResult<f64> {
    Ok(color_loss_impl(f, r, false)?.0)
}

pub fn color_loss_grad(f: &Tensor, r: &Tensor) -> CoreResult<(f64, Tensor)> {
    let (v, g) = color_loss_impl(f, r, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn color_loss_impl(f: &Tensor, r: &Tensor, want_grad: bool) -> CoreResult<(f64, Option<Tensor>)> {
    if f.channels() != 3 || r.channels() != 3 {
        return Err(CoreError::NotColorImage);
    }
    f.check_same_shape(r, "color loss")?;
    let (h, w) = (f.height(), f.width());
    let n = (h * w) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Tensor::zeros(3, h, w));
    for i in 0..h * w {
        let a = [f.plane(0)[i], f.plane(1)[i], f.plane(2)[i]];
        let b = [r.plane(0)[i], r.plane(1)[i], r.plane(2)[i]];
        let na = fmath::sqrt(a.iter().map(|v| v * v).sum());
        let nb = fmath::sqrt(b.iter().map(|v| v * v).sum());
        if na < COLOR_EPS || nb < COLOR_EPS {
            continue;
        }
        let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let ncross = fmath::sqrt(cross.iter().map(|v| v * v).sum());
        total += fmath::atan2(ncross, dot);
        if let Some(g) = grad.as_mut() {
            if ncross > 1e-12 {
                // theta = atan2(|a x b|, a.b);
                // d theta = (dot * d|axb| - |axb| * d dot) / (dot^2 + |axb|^2)
                let denom = dot * dot + ncross * ncross;
                let vhat = [cross[0] / ncross, cross[1] / ncross, cross[2] / ncross];
                // d|axb|/da = b x vhat
                let dn = [
                    b[1] * vhat[2] - b[2] * vhat[1],
                    b[2] * vhat[0] - b[0] * vhat[2],
                    b[0] * vhat[1] - b[1] * vhat[0],
                ];
                for c in 0..3 {
                    let dtheta = (dot * dn[c] - ncross * b[c]) / denom;
                    let gi = g.plane_mut(c);
                    gi[i] = dtheta / n;
                }
            }
        }
    }
    Ok((total / n, grad))
}

/// Total variation: per channel, summed squared forward differences divided
/// by `H*W`, then averaged over channels.
pub fn tv_loss(f: &Tensor) -> CoreResult<f64> {
    Ok(tv_loss_impl(f, false)?.0)
}

pub fn tv_loss_grad(f: &Tensor) -> CoreResult<(f64, Tensor)> {
    let (v, g) = tv_loss_impl(f, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn tv_loss_impl(f: &Tensor, want_grad: bool) -> CoreResult<(f64, Option<Tensor>)> {
    let (h, w) = (f.height(), f.width());
    if h < 2 || w < 2 {
        return Err(CoreError::ImageTooSmall { need: 2, h, w });
    }
    let hw = (h * w) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Tensor::zeros(f.channels(), h, w));
    for c in 0..f.channels() {
        let p = f.plane(c);
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = p[i + 1] - p[i];
                    acc += d * d;
                }
                if y + 1 < h {
                    let d = p[i + w] - p[i];
                    acc += d * d;
                }
            }
        }
        total += acc / hw;
        if let Some(g) = grad.as_mut() {
            let scale = 1.0 / (hw * f.channels() as f64);
            let gp = g.plane_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if x + 1 < w {
                        let d = p[i + 1] - p[i];
                        gp[i + 1] += 2.0 * d * scale;
                        gp[i] -= 2.0 * d * scale;
                    }
                    if y + 1 < h {
                        let d = p[i + w] - p[i];
                        gp[i + w] += 2.0 * d * scale;
                        gp[i] -= 2.0 * d * scale;
                    }
                }
            }
        }
    }
    Ok((total / f.channels() as f64, grad))
}

/// Whether each catalog candidate can be evaluated for this pair.
pub fn evaluable_mask(pair: &ExposurePair) -> [bool; 17] {
    let has_ref = pair.reference.is_some();
    let is_color = pair.under.channels() == 3;
    let mut mask = [true; 17];
    for (i, cand) in CATALOG.iter().enumerate() {
        if cand.needs_reference() && !has_ref {
            mask[i] = false;
        }
        if cand.family == LossFamily::Color && !is_color {
            mask[i] = false;
        }
    }
    mask
}

/// Per-candidate weights: softmax over the logits of evaluable candidates,
/// zero elsewhere.
pub fn combined_weights(params: &LossParams, mask: &[bool; 17]) -> CoreResult<Vec<f64>> {
    if !mask.iter().any(|&m| m) {
        return Err(CoreError::NoEvaluableCandidates);
    }
    let live: Vec<f64> = params
        .beta
        .iter()
        .zip(mask.iter())
        .filter_map(|(&b, &m)| m.then_some(b))
        .collect();
    let soft = fmath::softmax(&live);
    let mut out = vec![0.0; 17];
    let mut j = 0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out[i] = soft[j];
            j += 1;
        }
    }
    Ok(out)
}

fn reference_tensor<'a>(cand: &LossCandidate, pair: &'a ExposurePair) -> Option<&'a Tensor> {
    match cand.reference {
        RefKind::Over => Some(&pair.over),
        RefKind::Under => Some(&pair.under),
        RefKind::Reference => pair.reference.as_deref(),
        _ => None,
    }
}

/// Evaluate one candidate loss.
pub fn eval_candidate(
    cand: &LossCandidate,
    pair: &ExposurePair,
    f: &Tensor,
    ctx: &LossCtx,
) -> CoreResult<f64> {
    match cand.family {
        LossFamily::L1 => pixel_loss(f, reference_tensor(cand, pair).expect("masked"), 1),
        LossFamily::L2 => pixel_loss(f, reference_tensor(cand, pair).expect("masked"), 2),
        LossFamily::Ssim => ssim_loss(f, reference_tensor(cand, pair).expect("masked"), ctx.ssim),
        LossFamily::MefSsim => mef_ssim_loss(f, pair, ctx.mef),
        LossFamily::Grad => grad_loss(f, pair),
        LossFamily::Perc => {
            perceptual_loss(f, reference_tensor(cand, pair).expect("masked"), ctx.extractor)
        }
        LossFamily::Psnr => psnr_loss(f, reference_tensor(cand, pair).expect("masked")),
        LossFamily::Color => color_loss(f, reference_tensor(cand, pair).expect("masked")),
        LossFamily::Tv => tv_loss(f),
    }
}

/// Evaluate one candidate loss and its gradient w.r.t. the fused image.
pub fn eval_candidate_grad(
    cand: &LossCandidate,
    pair: &ExposurePair,
    f: &Tensor,
    ctx: &LossCtx,
) -> CoreResult<(f64, Tensor)> {
    match cand.family {
        LossFamily::L1 => pixel_loss_grad(f, reference_tensor(cand, pair).expect("masked"), 1),
        LossFamily::L2 => pixel_loss_grad(f, reference_tensor(cand, pair).expect("masked"), 2),
        LossFamily::Ssim => {
            ssim_loss_grad(f, reference_tensor(cand, pair).expect("masked"), ctx.ssim)
        }
        LossFamily::MefSsim => mef_ssim_loss_grad(f, pair, ctx.mef),
        LossFamily::Grad => grad_loss_grad(f, pair),
        LossFamily::Perc => {
            perceptual_loss_grad(f, reference_tensor(cand, pair).expect("masked"), ctx.extractor)
        }
        LossFamily::Psnr => psnr_loss_grad(f, reference_tensor(cand, pair).expect("masked")),
        LossFamily::Color => color_loss_grad(f, reference_tensor(cand, pair).expect("masked")),
        LossFamily::Tv => tv_loss_grad(f),
    }
}

/// The combined search loss: evaluable candidates weighted by the masked
/// softmax of the logits.
pub fn combine(
    params: &LossParams,
    pair: &ExposurePair,
    f: &Tensor,
    ctx: &LossCtx,
) -> CoreResult<f64> {
    let mask = evaluable_mask(pair);
    let w = combined_weights(params, &mask)?;
    let mut total = 0.0;
    for (i, cand) in CATALOG.iter().enumerate() {
        if w[i] == 0.0 {
            continue;
        }
        total += w[i] * eval_candidate(cand, pair, f, ctx)?;
    }
    if !total.is_finite() {
        return Err(CoreError::NonFiniteLoss(String::from("combined loss")));
    }
    Ok(total)
}

/// Combined loss plus its gradient w.r.t. the fused image.
pub fn combine_with_grad(
    params: &LossParams,
    pair: &ExposurePair,
    f: &Tensor,
    ctx: &LossCtx,
) -> CoreResult<(f64, Tensor)> {
    let mask = evaluable_mask(pair);
    let w = combined_weights(params, &mask)?;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(f.channels(), f.height(), f.width());
    for (i, cand) in CATALOG.iter().enumerate() {
        if w[i] == 0.0 {
            continue;
        }
        let (v, g) = eval_candidate_grad(cand, pair, f, ctx)?;
        total += w[i] * v;
        grad.add_scaled(&g, w[i]);
    }
    if !total.is_finite() {
        return Err(CoreError::NonFiniteLoss(String::from("combined loss")));
    }
    Ok((total, grad))
}
