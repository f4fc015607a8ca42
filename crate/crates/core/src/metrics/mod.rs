//! The evaluation metrics and report aggregation.
//!
//! Every metric operates on the luminance plane (`0.299 R + 0.587 G +
//! 0.114 B`); metrics whose conventional definitions assume `[0, 255]`
//! (SD, EN, VIF, TMQI) rescale internally, the SSIM family stays in the
//! `[0, 1]` domain with dynamic-range-1 stability constants.

mod qabf;
mod tmqi;
mod vif;

pub use qabf::qabf;
pub use tmqi::tmqi;
pub use vif::vif;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::ExposurePair;
use crate::error::{CoreError, CoreResult};
use crate::fmath;
use crate::ssim::{self, MefSsimConfig, SsimConfig};
use crate::tensor::{luminance, Image, Tensor};

/// Luminance plane rescaled to `[0, 255]`.
fn luma255(img: &Tensor) -> Vec<f64> {
    let mut y = luminance(img);
    for v in &mut y {
        *v *= 255.0;
    }
    y
}

/// Luminance as a single-channel tensor in `[0, 1]`.
fn luma_tensor(img: &Tensor) -> Tensor {
    Tensor::from_vec(1, img.height(), img.width(), luminance(img)).expect("shape preserved")
}

/// Population standard deviation of the `[0, 255]` luminance. Constant
/// images short-circuit to exactly zero.
pub fn sd(f: &Tensor) -> f64 {
    let y = luma255(f);
    if y.iter().all(|&v| v == y[0]) {
        return 0.0;
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    fmath::sqrt(var)
}

/// Shannon entropy (bits) of the 256-bin luminance histogram.
pub fn en(f: &Tensor) -> f64 {
    let y = luma255(f);
    let mut hist = [0u64; 256];
    for &v in &y {
        let bin = fmath::round(v).clamp(0.0, 255.0) as usize;
        hist[bin] += 1;
    }
    let n = y.len() as f64;
    let mut h = 0.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / n;
            h -= p * fmath::log2(p);
        }
    }
    h
}

/// Pearson correlation coefficient of the two luminance planes.
///
/// Bitwise-identical inputs return exactly 1; constant inputs have no
/// defined correlation and error.
pub fn cc(f: &Tensor, r: &Tensor) -> CoreResult<f64> {
    f.check_same_shape(r, "correlation inputs")?;
    let a = luminance(f);
    let b = luminance(r);
    if a == b {
        // Degenerate-guard shortcut; the generic path below would lose the
        // exact value to rounding in sqrt.
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        if a.iter().all(|&v| v == mean) {
            return Err(CoreError::ConstantImage);
        }
        return Ok(1.0);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(CoreError::ConstantImage);
    }
    Ok((cov / (fmath::sqrt(va) * fmath::sqrt(vb))).clamp(-1.0, 1.0))
}

/// Canonical per-scale weights of multi-scale SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Multi-scale SSIM on luminance. Up to five scales; fewer when the image
/// cannot support the 11-pixel window after halving, in which case the used
/// weights renormalize. Returns the value and the number of scales used.
pub fn ms_ssim_with_scales(f: &Tensor, r: &Tensor) -> CoreResult<(f64, usize)> {
    f.check_same_shape(r, "ms-ssim inputs")?;
    let cfg = SsimConfig::default();
    let mut scales = 0usize;
    let mut dim = f.height().min(f.width());
    while scales < 5 && dim >= cfg.window {
        scales += 1;
        dim /= 2;
    }
    if scales == 0 {
        return Err(CoreError::ImageTooSmall {
            need: cfg.window,
            h: f.height(),
            w: f.width(),
        });
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut a = luma_tensor(f);
    let mut b = luma_tensor(r);
    let mut value = 1.0;
    for s in 0..scales {
        let (mssim, mcs) = ssim::ssim_components(&a, &b, cfg)?;
        let weight = MS_SSIM_WEIGHTS[s] / wsum;
        let term = if s + 1 == scales { mssim } else { mcs };
        value *= fmath::powf(term.max(0.0), weight);
        if s + 1 < scales {
            a = ssim::downsample2(&a);
            b = ssim::downsample2(&b);
        }
    }
    Ok((value, scales))
}

pub fn ms_ssim(f: &Tensor, r: &Tensor) -> CoreResult<f64> {
    Ok(ms_ssim_with_scales(f, r)?.0)
}

/// MEF-SSIM reported as a similarity in `[~0, 1]`, on luminance.
pub fn mef_ssim_metric(f: &Tensor, pair: &ExposurePair) -> CoreResult<f64> {
    let fl = luma_tensor(f);
    let ul = luma_tensor(&pair.under);
    let ol = luma_tensor(&pair.over);
    ssim::mef_ssim(&fl, &ul, &ol, MefSsimConfig::default())
}

/// Canonical column order of the report (reference-based first).
pub const METRIC_ORDER: [&str; 8] = [
    "sd", "vif", "cc", "tmqi", "ms_ssim", "mef_ssim", "en", "qabf",
];

/// One image to evaluate: the fused output and its source pair.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub fused: Image,
    pub pair: ExposurePair,
}

/// Per-image and aggregate metric values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    /// Metric failures, recorded per `image/metric`, never fatal.
    pub errors: BTreeMap<String, String>,
}

/// Evaluate all metrics over the items. Reference-based metrics (CC, TMQI,
/// MS-SSIM) are skipped for items without a reference image.
pub fn evaluate_report(items: &[EvalItem]) -> MetricReport {
    let mut report = MetricReport::default();
    for item in items {
        let mut row: BTreeMap<String, f64> = BTreeMap::new();
        let mut record =
            |name: &str, value: CoreResult<f64>, errors: &mut BTreeMap<String, String>| {
                match value {
                    Ok(v) => {
                        row.insert(name.to_string(), v);
                    }
                    Err(e) => {
                        errors.insert(alloc::format!("{}/{name}", item.id), e.to_string());
                    }
                }
            };
        let f = item.fused.tensor();
        record("sd", Ok(sd(f)), &mut report.errors);
        record("en", Ok(en(f)), &mut report.errors);
        record("vif", vif(f, &item.pair), &mut report.errors);
        record("mef_ssim", mef_ssim_metric(f, &item.pair), &mut report.errors);
        record("qabf", qabf(f, &item.pair), &mut report.errors);
        if let Some(reference) = &item.pair.reference {
            record("cc", cc(f, reference), &mut report.errors);
            record("tmqi", tmqi(f, reference), &mut report.errors);
            record("ms_ssim", ms_ssim(f, reference), &mut report.errors);
        }
        report.per_image.insert(item.id.clone(), row);
    }
    for &name in METRIC_ORDER.iter() {
        let values: Vec<f64> = report
            .per_image
            .values()
            .filter_map(|row| row.get(name).copied())
            .collect();
        if !values.is_empty() {
            report
                .aggregate
                .insert(name.to_string(), values.iter().sum::<f64>() / values.len() as f64);
        }
    }
    report
}
