//! Frozen convolutional feature extractors.
//!
//! Two backends expose the same interface: a bundled deterministic fallback
//! (a fixed-seed random convolutional network, so the whole pipeline runs
//! with no external weights) and a VGG-16 front end built from a loaded
//! tensor set. Both are frozen: they only ever produce features and input
//! gradients, never parameter updates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::conv::Conv2d;
use crate::error::{CoreError, CoreResult};
use crate::fmath;
use crate::rng;
use crate::tensor::Tensor;

/// Fixed root seed of the bundled fallback weights.
const FALLBACK_SEED: u64 = 0x5eed_fa11_bacc;

#[derive(Debug, Clone)]
enum Layer {
    Conv(Conv2d),
    Relu,
    Tanh,
    /// 2x2 stride-2 average pooling, ceil mode.
    AvgPool2,
    /// 2x2 stride-2 max pooling, floor mode.
    MaxPool2,
    /// Pass-through, used by the linear stub backend.
    Identity,
}

/// A frozen feature extractor with tap points after selected layers.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    backend: String,
    layers: Vec<Layer>,
    /// Indices into `layers`; the output *after* each listed layer is a tap.
    taps: Vec<usize>,
}

/// Cache of every intermediate activation for the backward pass.
pub struct ExtractorCache {
    /// `acts[0]` is the input; `acts[i+1]` the output of layer `i`.
    acts: Vec<Tensor>,
}

fn avg_pool2(x: &Tensor) -> Tensor {
    let nh = x.height().div_ceil(2);
    let nw = x.width().div_ceil(2);
    let mut out = Tensor::zeros(x.channels(), nh, nw);
    for c in 0..x.channels() {
        for y in 0..nh {
            for xx in 0..nw {
                let mut acc = 0.0;
                let mut count = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                        if sy < x.height() && sx < x.width() {
                            acc += x.get(c, sy, sx);
                            count += 1.0;
                        }
                    }
                }
                out.set(c, y, xx, acc / count);
            }
        }
    }
    out
}

fn avg_pool2_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(x.channels(), x.height(), x.width());
    for c in 0..x.channels() {
        for y in 0..dy.height() {
            for xx in 0..dy.width() {
                let mut count = 0.0;
                for dyo in 0..2 {
                    for dxo in 0..2 {
                        if 2 * y + dyo < x.height() && 2 * xx + dxo < x.width() {
                            count += 1.0;
                        }
                    }
                }
                let g = dy.get(c, y, xx) / count;
                for dyo in 0..2 {
                    for dxo in 0..2 {
                        let (sy, sx) = (2 * y + dyo, 2 * xx + dxo);
                        if sy < x.height() && sx < x.width() {
                            let v = dx.get(c, sy, sx) + g;
                            dx.set(c, sy, sx, v);
                        }
                    }
                }
            }
        }
    }
    dx
}

fn max_pool2(x: &Tensor) -> Tensor {
    let nh = x.height() / 2;
    let nw = x.width() / 2;
    let mut out = Tensor::zeros(x.channels(), nh.max(1), nw.max(1));
    if nh == 0 || nw == 0 {
        // Degenerate inputs keep a single row/column.
        return x.clone();
    }
    for c in 0..x.channels() {
        for y in 0..nh {
            for xx in 0..nw {
                let m = x
                    .get(c, 2 * y, 2 * xx)
                    .max(x.get(c, 2 * y, 2 * xx + 1))
                    .max(x.get(c, 2 * y + 1, 2 * xx))
                    .max(x.get(c, 2 * y + 1, 2 * xx + 1));
                out.set(c, y, xx, m);
            }
        }
    }
    out
}

fn max_pool2_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(x.channels(), x.height(), x.width());
    let nh = x.height() / 2;
    let nw = x.width() / 2;
    if nh == 0 || nw == 0 {
        return dy.clone();
    }
    for c in 0..x.channels() {
        for y in 0..nh {
            for xx in 0..nw {
                let mut best = (2 * y, 2 * xx);
                let mut bv = x.get(c, 2 * y, 2 * xx);
                for (sy, sx) in [
                    (2 * y, 2 * xx + 1),
                    (2 * y + 1, 2 * xx),
                    (2 * y + 1, 2 * xx + 1),
                ] {
                    let v = x.get(c, sy, sx);
                    if v > bv {
                        bv = v;
                        best = (sy, sx);
                    }
                }
                let v = dx.get(c, best.0, best.1) + dy.get(c, y, xx);
                dx.set(c, best.0, best.1, v);
            }
        }
    }
    dx
}

impl FeatureExtractor {
    /// The bundled deterministic backend with its default four tap stages.
    pub fn fallback() -> Self {
        Self::fallback_with_layers(&[1, 2, 3, 4]).expect("default layers valid")
    }

    /// Fallback backend with a subset of its four stages (1-based ids).
    pub fn fallback_with_layers(stage_ids: &[usize]) -> CoreResult<Self> {
        if stage_ids.is_empty() || stage_ids.iter().any(|&s| s == 0 || s > 4) {
            return Err(CoreError::ExtractorUnavailable(
                "fallback stages must be within 1..=4".into(),
            ));
        }
        let widths = [8usize, 12, 16, 16];
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        let mut in_ch = 3usize;
        for stage in 0..4 {
            let out_ch = widths[stage];
            let mut r = rng::stream(FALLBACK_SEED, "fallback-extractor", &[stage as u64]);
            let mut conv = Conv2d::zeros(in_ch, out_ch, 3, 3, 1).init(&mut r);
            // Rescale toward unit-ish activations under tanh.
            for w in &mut conv.weights {
                *w *= 0.8;
            }
            layers.push(Layer::Conv(conv));
            layers.push(Layer::Tanh);
            if stage_ids.contains(&(stage + 1)) {
                taps.push(layers.len() - 1);
            }
            if stage < 3 {
                layers.push(Layer::AvgPool2);
            }
            in_ch = out_ch;
        }
        Ok(FeatureExtractor {
            backend: "deterministic_fallback".into(),
            layers,
            taps,
        })
    }

    /// VGG-16 front end (through `conv4_3`) from a loaded named-tensor set.
    ///
    /// Expects `convX_Y.w` with shape `[out, in, 3, 3]` and `convX_Y.b` for
    /// the standard VGG-16 layer names; taps follow the last activation of
    /// each of the first four blocks.
    pub fn vgg16(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> CoreResult<Self> {
        let lookup = |name: &str| -> CoreResult<(&Vec<usize>, &Vec<f64>)> {
            tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|(_, s, d)| (s, d))
                .ok_or_else(|| {
                    CoreError::ExtractorUnavailable(format!("missing tensor {name}"))
                })
        };
        let spec: [(&str, usize, usize); 10] = [
            ("conv1_1", 3, 64),
            ("conv1_2", 64, 64),
            ("conv2_1", 64, 128),
            ("conv2_2", 128, 128),
            ("conv3_1", 128, 256),
            ("conv3_2", 256, 256),
            ("conv3_3", 256, 256),
            ("conv4_1", 256, 512),
            ("conv4_2", 512, 512),
            ("conv4_3", 512, 512),
        ];
        // Block boundaries: taps after conv1_2, conv2_2, conv3_3, conv4_3.
        let tap_after = ["conv1_2", "conv2_2", "conv3_3", "conv4_3"];
        let pool_after = ["conv1_2", "conv2_2", "conv3_3"];
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        for (name, in_ch, out_ch) in spec {
            let (wshape, wdata) = lookup(&format!("{name}.w"))?;
            let (bshape, bdata) = lookup(&format!("{name}.b"))?;
            if wshape.as_slice() != [out_ch, in_ch, 3, 3] || bshape.as_slice() != [out_ch] {
                return Err(CoreError::ExtractorUnavailable(format!(
                    "tensor {name} has unexpected shape {wshape:?}/{bshape:?}"
                )));
            }
            let mut conv = Conv2d::zeros(in_ch, out_ch, 3, 3, 1);
            conv.weights.copy_from_slice(wdata);
            conv.bias.copy_from_slice(bdata);
            layers.push(Layer::Conv(conv));
            layers.push(Layer::Relu);
            if tap_after.contains(&name) {
                taps.push(layers.len() - 1);
            }
            if pool_after.contains(&name) {
                layers.push(Layer::MaxPool2);
            }
        }
        Ok(FeatureExtractor {
            backend: "pretrained_vgg16".into(),
            layers,
            taps,
        })
    }

    /// A single-tap linear backend whose features are the raw pixels.
    /// Useful wherever a test needs hand-checkable feature geometry.
    pub fn linear_stub() -> Self {
        FeatureExtractor {
            backend: "linear_stub".into(),
            layers: alloc::vec![Layer::Identity],
            taps: alloc::vec![0],
        }
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    /// Features at every configured tap, deterministic for a given input.
    pub fn extract(&self, img: &Tensor) -> CoreResult<Vec<Tensor>> {
        Ok(self.extract_cached(img)?.0)
    }

    /// Features plus the cache needed for the input-gradient pass.
    pub fn extract_cached(&self, img: &Tensor) -> CoreResult<(Vec<Tensor>, ExtractorCache)> {
        if let Some(Layer::Conv(c)) = self.layers.first() {
            if img.channels() != c.in_ch {
                return Err(CoreError::ExtractorUnavailable(format!(
                    "extractor expects {} channels, got {}",
                    c.in_ch,
                    img.channels()
                )));
            }
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(img.clone());
        for layer in &self.layers {
            let x = acts.last().expect("non-empty");
            let y = match layer {
                Layer::Conv(c) => c.forward(x),
                Layer::Relu => x.map(|v| v.max(0.0)),
                Layer::Tanh => x.map(fmath::tanh),
                Layer::AvgPool2 => avg_pool2(x),
                Layer::MaxPool2 => max_pool2(x),
                Layer::Identity => x.clone(),
            };
            acts.push(y);
        }
        let feats = self.taps.iter().map(|&t| acts[t + 1].clone()).collect();
        Ok((feats, ExtractorCache { acts }))
    }

    /// Input gradient given one upstream gradient per tap.
    pub fn backward(&self, cache: &ExtractorCache, dtaps: &[Tensor]) -> Tensor {
        assert_eq!(dtaps.len(), self.taps.len(), "one gradient per tap");
        let input = &cache.acts[0];
        let mut grad: Option<Tensor> = None;
        for i in (0..self.layers.len()).rev() {
            if let Some(tpos) = self.taps.iter().position(|&t| t == i) {
                match &mut grad {
                    None => grad = Some(dtaps[tpos].clone()),
                    Some(g) => g.add_scaled(&dtaps[tpos], 1.0),
                }
            }
            let Some(g) = grad.take() else {
                continue;
            };
            let x = &cache.acts[i];
            let y = &cache.acts[i + 1];
            let gnext = match &self.layers[i] {
                Layer::Conv(c) => c.backward(x, &g).0,
                Layer::Relu => x.zip(&g, |v, gv| if v > 0.0 { gv } else { 0.0 }),
                Layer::Tanh => y.zip(&g, |t, gv| gv * (1.0 - t * t)),
                Layer::AvgPool2 => avg_pool2_backward(x, &g),
                Layer::MaxPool2 => max_pool2_backward(x, &g),
                Layer::Identity => g,
            };
            grad = Some(gnext);
        }
        grad.unwrap_or_else(|| Tensor::zeros(input.channels(), input.height(), input.width()))
    }
}
