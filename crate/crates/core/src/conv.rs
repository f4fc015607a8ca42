//! 2-D convolution with analytic backward passes.
//!
//! All convolutions in the network are "same" convolutions: odd effective
//! kernel extents, zero padding, output spatial size equal to the input.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::fmath;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A convolution layer. Weights are `[out][in][kh][kw]`, bias per out channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub dilation: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a convolution's parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, kh: usize, kw: usize, dilation: usize) -> Self {
        assert!(in_ch >= 1 && out_ch >= 1, "channel counts must be positive");
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernels must be odd");
        assert!(dilation >= 1);
        Conv2d {
            in_ch,
            out_ch,
            kh,
            kw,
            dilation,
            weights: alloc::vec![0.0; out_ch * in_ch * kh * kw],
            bias: alloc::vec![0.0; out_ch],
        }
    }

    /// Kaiming-normal initialization with the leaky-ReLU gain.
    pub fn init(mut self, rng: &mut Rng) -> Self {
        let fan_in = (self.in_ch * self.kh * self.kw) as f64;
        let gain = fmath::sqrt(2.0 / (1.0 + 0.2 * 0.2));
        let sd = gain / fmath::sqrt(fan_in);
        let normal = Normal::new(0.0, sd).expect("valid std");
        for w in &mut self.weights {
            *w = normal.sample(rng);
        }
        // Small random bias so finite-difference tests don't sit on kinks.
        for b in &mut self.bias {
            *b = 0.01 * (rng.random::<f64>() - 0.5);
        }
        self
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + i) * self.kh + ky) * self.kw + kx
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Same-padding forward pass.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_ch, "input channel mismatch");
        let (h, w) = (x.height(), x.width());
        let py = self.dilation * (self.kh - 1) / 2;
        let px = self.dilation * (self.kw - 1) / 2;
        let mut out = Tensor::zeros(self.out_ch, h, w);
        for o in 0..self.out_ch {
            let plane = out.plane_mut(o);
            for v in plane.iter_mut() {
                *v = self.bias[o];
            }
            for i in 0..self.in_ch {
                let xin = x.plane(i);
                for ky in 0..self.kh {
                    let oy = ky * self.dilation;
                    for kx in 0..self.kw {
                        let ox = kx * self.dilation;
                        let wv = self.weights[self.widx(o, i, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        // y + oy - py must land in [0, h)
                        let y_lo = py.saturating_sub(oy);
                        let y_hi = (h + py).saturating_sub(oy).min(h);
                        let x_lo = px.saturating_sub(ox);
                        let x_hi = (w + px).saturating_sub(ox).min(w);
                        for y in y_lo..y_hi {
                            let sy = y + oy - py;
                            let src = &xin[sy * w..sy * w + w];
                            let dst = &mut plane[y * w..y * w + w];
                            for xpos in x_lo..x_hi {
                                dst[xpos] += wv * src[xpos + ox - px];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Backward pass: given input and upstream gradient, produce the input
    /// gradient and parameter gradients.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, ConvGrads) {
        assert_eq!(dy.channels(), self.out_ch);
        assert_eq!(x.channels(), self.in_ch);
        assert_eq!((x.height(), x.width()), (dy.height(), dy.width()));
        let (h, w) = (x.height(), x.width());
        let py = self.dilation * (self.kh - 1) / 2;
        let px = self.dilation * (self.kw - 1) / 2;
        let mut dx = Tensor::zeros(self.in_ch, h, w);
        let mut grads = ConvGrads {
            weights: alloc::vec![0.0; self.weights.len()],
            bias: alloc::vec![0.0; self.bias.len()],
        };
        for o in 0..self.out_ch {
            let dplane = dy.plane(o);
            grads.bias[o] += dplane.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xin = x.plane(i);
                let dxin = dx.plane_mut(i);
                for ky in 0..self.kh {
                    let oy = ky * self.dilation;
                    for kx in 0..self.kw {
                        let ox = kx * self.dilation;
                        let wv = self.weights[self.widx(o, i, ky, kx)];
                        let mut wg = 0.0;
                        let y_lo = py.saturating_sub(oy);
                        let y_hi = (h + py).saturating_sub(oy).min(h);
                        let x_lo = px.saturating_sub(ox);
                        let x_hi = (w + px).saturating_sub(ox).min(w);
                        for y in y_lo..y_hi {
                            let sy = y + oy - py;
                            let src = &xin[sy * w..sy * w + w];
                            let dsrc = &mut dxin[sy * w..sy * w + w];
                            let drow = &dplane[y * w..y * w + w];
                            for xpos in x_lo..x_hi {
                                let g = drow[xpos];
                                wg += g * src[xpos + ox - px];
                                dsrc[xpos + ox - px] += g * wv;
                            }
                        }
                        grads.weights[self.widx(o, i, ky, kx)] += wg;
                    }
                }
            }
        }
        (dx, grads)
    }
}

/// Leaky ReLU with the fixed slope used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient of leaky ReLU given the pre-activation values.
pub fn leaky_relu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    pre.zip(dy, |z, g| if z >= 0.0 { g } else { LEAKY_SLOPE * g })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(fmath::sigmoid)
}

/// Gradient of sigmoid given the *post*-activation values.
pub fn sigmoid_backward_from_output(out: &Tensor, dy: &Tensor) -> Tensor {
    out.zip(dy, |s, g| g * s * (1.0 - s))
}

/// Stable parameter name for a convolution inside a named block.
pub fn param_names(block: &str) -> (String, String) {
    (alloc::format!("{block}.w"), alloc::format!("{block}.b"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::rng;
    use alloc::vec::Vec;
    use rand::Rng as _;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "conv-test", &[]);
        let data: Vec<f64> = (0..c * h * w).map(|_| r.random::<f64>() - 0.5).collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn identity_kernel_passes_through() {
        let mut conv = Conv2d::zeros(1, 1, 3, 3, 1);
        let center = conv.widx(0, 0, 1, 1);
        conv.weights[center] = 1.0;
        let x = random_tensor(1, 5, 7, 1);
        let y = conv.forward(&x);
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn output_preserves_spatial_shape_for_all_kernels() {
        for &(kh, kw, d) in &[
            (1usize, 1usize, 1usize),
            (3, 3, 1),
            (5, 5, 1),
            (7, 7, 1),
            (1, 3, 1),
            (3, 1, 1),
            (1, 5, 1),
            (5, 1, 1),
            (3, 3, 2),
            (5, 5, 2),
            (7, 7, 2),
        ] {
            let mut r = rng::stream(9, "init", &[kh as u64, kw as u64, d as u64]);
            let conv = Conv2d::zeros(2, 3, kh, kw, d).init(&mut r);
            let x = random_tensor(2, 11, 13, 2);
            let y = conv.forward(&x);
            assert_eq!(y.shape(), (3, 11, 13));
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_weights_and_input() {
        let mut r = rng::stream(4, "init", &[]);
        let conv = Conv2d::zeros(2, 2, 3, 3, 2).init(&mut r);
        let x = random_tensor(2, 6, 6, 3);
        // Scalar loss: weighted sum of outputs so gradients are nontrivial.
        let probe = random_tensor(2, 6, 6, 5);

        let y = conv.forward(&x);
        let (dx, grads) = conv.backward(&x, &probe);
        let _ = y;

        // Input gradient.
        let res = check_gradient(x.data(), dx.data(), 1e-6, 1e-6, |vals| {
            let xt = Tensor::from_vec(2, 6, 6, vals.to_vec()).unwrap();
            conv.forward(&xt).dot(&probe)
        });
        assert!(res.max_rel_err < 1e-7, "input grad: {res:?}");

        // Weight gradient.
        let res = check_gradient(&conv.weights, &grads.weights, 1e-6, 1e-6, |vals| {
            let mut c2 = conv.clone();
            c2.weights = vals.to_vec();
            c2.forward(&x).dot(&probe)
        });
        assert!(res.max_rel_err < 1e-7, "weight grad: {res:?}");

        // Bias gradient.
        let res = check_gradient(&conv.bias, &grads.bias, 1e-6, 1e-6, |vals| {
            let mut c2 = conv.clone();
            c2.bias = vals.to_vec();
            c2.forward(&x).dot(&probe)
        });
        assert!(res.max_rel_err < 1e-7, "bias grad: {res:?}");
    }
}
