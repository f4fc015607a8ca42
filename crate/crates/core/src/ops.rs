//! The architecture search space: candidate convolutional primitives and the
//! continuous mixed operation weighted by per-edge logits.

use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conv::{leaky_relu, leaky_relu_backward, Conv2d, ConvGrads};
use crate::error::{CoreError, CoreResult};
use crate::fmath::softmax;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// The eleven candidate primitives. Dilated variants use dilation 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv1x1,
    Conv3x3,
    Conv5x5,
    Conv7x7,
    Conv1x3,
    Conv3x1,
    Conv1x5,
    Conv5x1,
    Dil3x3,
    Dil5x5,
    Dil7x7,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::Conv5x5,
        OpKind::Conv7x7,
        OpKind::Conv1x3,
        OpKind::Conv3x1,
        OpKind::Conv1x5,
        OpKind::Conv5x1,
        OpKind::Dil3x3,
        OpKind::Dil5x5,
        OpKind::Dil7x7,
    ];

    /// `(kh, kw)` of the kernel.
    pub fn kernel(self) -> (usize, usize) {
        match self {
            OpKind::Conv1x1 => (1, 1),
            OpKind::Conv3x3 | OpKind::Dil3x3 => (3, 3),
            OpKind::Conv5x5 | OpKind::Dil5x5 => (5, 5),
            OpKind::Conv7x7 | OpKind::Dil7x7 => (7, 7),
            OpKind::Conv1x3 => (1, 3),
            OpKind::Conv3x1 => (3, 1),
            OpKind::Conv1x5 => (1, 5),
            OpKind::Conv5x1 => (5, 1),
        }
    }

    pub fn dilation(self) -> usize {
        match self {
            OpKind::Dil3x3 | OpKind::Dil5x5 | OpKind::Dil7x7 => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::Conv5x5 => "conv5x5",
            OpKind::Conv7x7 => "conv7x7",
            OpKind::Conv1x3 => "conv1x3",
            OpKind::Conv3x1 => "conv3x1",
            OpKind::Conv1x5 => "conv1x5",
            OpKind::Conv5x1 => "conv5x1",
            OpKind::Dil3x3 => "dil3x3",
            OpKind::Dil5x5 => "dil5x5",
            OpKind::Dil7x7 => "dil7x7",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// One candidate: a shape-preserving convolution followed by leaky ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOp {
    pub kind: OpKind,
    pub conv: Conv2d,
}

impl CandidateOp {
    pub fn new(kind: OpKind, channels: usize) -> Self {
        let (kh, kw) = kind.kernel();
        CandidateOp {
            kind,
            conv: Conv2d::zeros(channels, channels, kh, kw, kind.dilation()),
        }
    }

    pub fn init(mut self, rng: &mut Rng) -> Self {
        self.conv = self.conv.init(rng);
        self
    }

    /// Returns `(activated output, pre-activation)`.
    pub fn forward(&self, x: &Tensor) -> (Tensor, Tensor) {
        let pre = self.conv.forward(x);
        (leaky_relu(&pre), pre)
    }

    pub fn backward(&self, x: &Tensor, pre: &Tensor, dy: &Tensor) -> (Tensor, ConvGrads) {
        let dpre = leaky_relu_backward(pre, dy);
        self.conv.backward(x, &dpre)
    }
}

/// Build the full candidate set at the given channel width.
pub fn build_candidate_set(channels: usize, rng: &mut Rng) -> CoreResult<Vec<CandidateOp>> {
    if channels == 0 {
        return Err(CoreError::InvalidConfig(
            "candidate ops need at least one channel".into(),
        ));
    }
    Ok(OpKind::ALL
        .iter()
        .map(|&k| CandidateOp::new(k, channels).init(rng))
        .collect())
}

/// Scale of the Gaussian noise added to fresh architecture logits.
pub const ALPHA_INIT_NOISE: f64 = 1e-3;

/// A searchable edge: candidates mixed by softmax of the live logits.
///
/// `alpha` holds one logit per *active* candidate; `active` masks the
/// original candidate list. Pruned candidates leave the softmax support
/// entirely, so the surviving weights renormalize.
#[derive(Debug, Clone)]
pub struct MixedEdge {
    pub name: String,
    pub ops: Vec<CandidateOp>,
    pub alpha: Vec<f64>,
    pub active: Vec<bool>,
}

/// Forward cache for one mixed edge application.
#[derive(Debug, Clone)]
pub struct EdgeCache {
    x: Tensor,
    pre: Vec<Tensor>,
    weights: Vec<f64>,
}

impl EdgeCache {
    /// Pre-activation of the `j`-th active candidate.
    pub fn pre(&self, j: usize) -> &Tensor {
        &self.pre[j]
    }

    pub fn input(&self) -> &Tensor {
        &self.x
    }
}

/// Gradients produced by a mixed edge backward pass.
#[derive(Debug)]
pub struct EdgeGrads {
    /// `(candidate index, gradients)` for each active candidate.
    pub conv: Vec<(usize, ConvGrads)>,
    /// Gradient w.r.t. the live logits (aligned with `alpha`).
    pub alpha: Vec<f64>,
}

impl MixedEdge {
    pub fn new(name: impl Into<String>, ops: Vec<CandidateOp>) -> Self {
        assert!(!ops.is_empty(), "an edge needs at least one candidate");
        let n = ops.len();
        MixedEdge {
            name: name.into(),
            ops,
            alpha: alloc::vec![0.0; n],
            active: alloc::vec![true; n],
        }
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| if a { Some(i) } else { None })
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Softmax over the live logits: nonnegative, sums to one.
    pub fn arch_weights(&self) -> Vec<f64> {
        debug_assert_eq!(self.alpha.len(), self.active_count());
        softmax(&self.alpha)
    }

    /// Initialize logits to zeros plus Gaussian noise of `ALPHA_INIT_NOISE`,
    /// so early pruning is driven by data rather than by the draw.
    pub fn init_alpha(&mut self, rng: &mut Rng) {
        self.init_alpha_with(rng, ALPHA_INIT_NOISE);
    }

    pub fn init_alpha_with(&mut self, rng: &mut Rng, noise: f64) {
        if noise == 0.0 {
            for a in &mut self.alpha {
                *a = 0.0;
            }
            return;
        }
        let normal = Normal::new(0.0, noise).expect("valid noise scale");
        for a in &mut self.alpha {
            *a = normal.sample(rng);
        }
    }

    /// Weighted mixture of the active candidates.
    pub fn forward(&self, x: &Tensor) -> (Tensor, EdgeCache) {
        let weights = self.arch_weights();
        let mut out: Option<Tensor> = None;
        let mut pres = Vec::with_capacity(weights.len());
        for (j, &i) in self.active_indices().iter().enumerate() {
            let (u, pre) = self.ops[i].forward(x);
            match &mut out {
                None => {
                    let mut first = u;
                    first.scale(weights[j]);
                    out = Some(first);
                }
                Some(acc) => acc.add_scaled(&u, weights[j]),
            }
            pres.push(pre);
        }
        (
            out.expect("edge has at least one active candidate"),
            EdgeCache {
                x: x.clone(),
                pre: pres,
                weights,
            },
        )
    }

    /// Backward pass. Returns the input gradient and per-parameter grads,
    /// including the logit gradient through the softmax.
    pub fn backward(&self, cache: &EdgeCache, dy: &Tensor) -> (Tensor, EdgeGrads) {
        let idxs = self.active_indices();
        let s = &cache.weights;
        // q_j = <dy, u_j> with u_j the activated candidate output.
        let mut q = Vec::with_capacity(idxs.len());
        for (j, _) in idxs.iter().enumerate() {
            let u = leaky_relu(&cache.pre[j]);
            q.push(dy.dot(&u));
        }
        let qdot: f64 = s.iter().zip(q.iter()).map(|(&a, &b)| a * b).sum();
        let dalpha: Vec<f64> = s
            .iter()
            .zip(q.iter())
            .map(|(&sj, &qj)| sj * (qj - qdot))
            .collect();

        let mut dx = Tensor::zeros(cache.x.channels(), cache.x.height(), cache.x.width());
        let mut conv_grads = Vec::with_capacity(idxs.len());
        for (j, &i) in idxs.iter().enumerate() {
            let mut dyj = dy.clone();
            dyj.scale(s[j]);
            let (dxi, g) = self.ops[i].backward(&cache.x, &cache.pre[j], &dyj);
            dx.add_scaled(&dxi, 1.0);
            conv_grads.push((i, g));
        }
        (
            dx,
            EdgeGrads {
                conv: conv_grads,
                alpha: dalpha,
            },
        )
    }

    /// Deactivate the candidate at `original_index`, dropping its logit.
    pub fn deactivate(&mut self, original_index: usize) {
        assert!(self.active[original_index], "candidate already inactive");
        let live_pos = self
            .active_indices()
            .iter()
            .position(|&i| i == original_index)
            .expect("active index present");
        self.active[original_index] = false;
        self.alpha.remove(live_pos);
    }
}

/// Serializable snapshot of one edge's searchable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSnapshot {
    pub name: String,
    pub kinds: Vec<String>,
    pub active: Vec<bool>,
    pub alpha: Vec<f64>,
}

impl EdgeSnapshot {
    pub fn of(edge: &MixedEdge) -> Self {
        EdgeSnapshot {
            name: edge.name.clone(),
            kinds: edge.ops.iter().map(|o| String::from(o.kind.name())).collect(),
            active: edge.active.clone(),
            alpha: edge.alpha.clone(),
        }
    }
}

/// An edge after retention: the surviving candidates with frozen weights.
#[derive(Debug, Clone)]
pub struct FinalizedEdge {
    pub name: String,
    /// `(kind, fixed weight)`, ordered by descending weight.
    pub retained: Vec<(OpKind, f64)>,
    pub ops: Vec<CandidateOp>,
    /// Logits of the retained candidates at finalization time.
    pub source_alpha: Vec<f64>,
}

/// Forward cache for a finalized edge.
#[derive(Debug, Clone)]
pub struct FinalCache {
    x: Tensor,
    pre: Vec<Tensor>,
}

impl FinalCache {
    pub fn pre(&self, j: usize) -> &Tensor {
        &self.pre[j]
    }

    pub fn input(&self) -> &Tensor {
        &self.x
    }
}

impl FinalizedEdge {
    pub fn forward(&self, x: &Tensor) -> (Tensor, FinalCache) {
        let mut out: Option<Tensor> = None;
        let mut pres = Vec::with_capacity(self.ops.len());
        for (op, &(_, wgt)) in self.ops.iter().zip(self.retained.iter()) {
            let (u, pre) = op.forward(x);
            match &mut out {
                None => {
                    let mut first = u;
                    first.scale(wgt);
                    out = Some(first);
                }
                Some(acc) => acc.add_scaled(&u, wgt),
            }
            pres.push(pre);
        }
        (
            out.expect("finalized edge retains at least one op"),
            FinalCache { x: x.clone(), pre: pres },
        )
    }

    pub fn backward(&self, cache: &FinalCache, dy: &Tensor) -> (Tensor, Vec<ConvGrads>) {
        let mut dx = Tensor::zeros(cache.x.channels(), cache.x.height(), cache.x.width());
        let mut grads = Vec::with_capacity(self.ops.len());
        for ((op, &(_, wgt)), pre) in self.ops.iter().zip(self.retained.iter()).zip(&cache.pre) {
            let mut dyj = dy.clone();
            dyj.scale(wgt);
            let (dxi, g) = op.backward(&cache.x, pre, &dyj);
            dx.add_scaled(&dxi, 1.0);
            grads.push(g);
        }
        (dx, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::rng;
    use alloc::vec;
    use rand::Rng as _;

    fn nonneg_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "ops-test", &[]);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    /// 1x1 convolution acting as the identity on `channels`.
    fn identity_op(channels: usize) -> CandidateOp {
        let mut op = CandidateOp::new(OpKind::Conv1x1, channels);
        for c in 0..channels {
            let i = ((c * channels + c) * 1) * 1;
            op.conv.weights[i] = 1.0;
        }
        op
    }

    /// Zero convolution with a constant bias: emits `value` everywhere.
    fn constant_op(channels: usize, value: f64) -> CandidateOp {
        let mut op = CandidateOp::new(OpKind::Conv1x1, channels);
        for b in &mut op.conv.bias {
            *b = value;
        }
        op
    }

    #[test]
    fn candidate_set_has_eleven_shape_preserving_ops() {
        let mut r = rng::stream(1, "init", &[]);
        let ops = build_candidate_set(16, &mut r).unwrap();
        assert_eq!(ops.len(), 11);
        let x = nonneg_tensor(16, 12, 12, 2);
        for op in &ops {
            let (y, _) = op.forward(&x);
            assert_eq!(y.shape(), (16, 12, 12));
        }
    }

    #[test]
    fn dilated_kinds_report_dilation_two() {
        let mut r = rng::stream(1, "init", &[]);
        let ops = build_candidate_set(4, &mut r).unwrap();
        for op in &ops {
            let expect = match op.kind {
                OpKind::Dil3x3 | OpKind::Dil5x5 | OpKind::Dil7x7 => 2,
                _ => 1,
            };
            assert_eq!(op.conv.dilation, expect, "{}", op.kind.name());
        }
    }

    #[test]
    fn zero_channels_rejected() {
        let mut r = rng::stream(1, "init", &[]);
        assert!(build_candidate_set(0, &mut r).is_err());
    }

    #[test]
    fn uniform_logits_give_uniform_weights() {
        let edge = MixedEdge::new("e", vec![identity_op(2), identity_op(2), identity_op(2)]);
        let w = edge.arch_weights();
        for &wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ln2_logit_gives_two_thirds() {
        let mut edge = MixedEdge::new("e", vec![identity_op(2), identity_op(2)]);
        edge.alpha = vec![core::f64::consts::LN_2, 0.0];
        let w = edge.arch_weights();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn large_logit_matches_scalar_softmax_oracle() {
        // Independent scalar oracle for softmax([5, 0, 0]).
        let e5 = libm::exp(5.0);
        let oracle = [e5 / (e5 + 2.0), 1.0 / (e5 + 2.0), 1.0 / (e5 + 2.0)];
        let mut edge =
            MixedEdge::new("e", vec![identity_op(1), identity_op(1), identity_op(1)]);
        edge.alpha = vec![5.0, 0.0, 0.0];
        let w = edge.arch_weights();
        for (a, b) in w.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_active_candidate_passes_through() {
        let mut edge = MixedEdge::new("e", vec![identity_op(2), constant_op(2, 5.0)]);
        edge.deactivate(1);
        let x = nonneg_tensor(2, 6, 6, 3);
        let (y, _) = edge.forward(&x);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn identity_stubs_reproduce_input() {
        let edge = MixedEdge::new("e", vec![identity_op(2), identity_op(2), identity_op(2)]);
        let x = nonneg_tensor(2, 5, 5, 4);
        let (y, _) = edge.forward(&x);
        for (a, b) in y.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_mixture_of_constants_averages() {
        let edge = MixedEdge::new("e", vec![constant_op(1, 1.0), constant_op(1, 3.0)]);
        let x = nonneg_tensor(1, 4, 4, 5);
        let (y, _) = edge.forward(&x);
        for &v in y.data() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_alpha_zero_noise_is_uniform() {
        let mut edge = MixedEdge::new("e", vec![identity_op(1), identity_op(1)]);
        let mut r = rng::stream(8, "alpha", &[]);
        edge.init_alpha_with(&mut r, 0.0);
        assert_eq!(edge.alpha, vec![0.0, 0.0]);
    }

    #[test]
    fn init_alpha_is_deterministic_and_near_uniform() {
        let mut r = rng::stream(11, "ops", &[]);
        let ops = build_candidate_set(2, &mut r).unwrap();
        let mut a = MixedEdge::new("e", ops.clone());
        let mut b = MixedEdge::new("e", ops);
        let mut r1 = rng::stream(11, "alpha", &[]);
        let mut r2 = rng::stream(11, "alpha", &[]);
        a.init_alpha(&mut r1);
        b.init_alpha(&mut r2);
        assert_eq!(a.alpha, b.alpha);

        // Oracle for the softmax spread: ratio = exp(max - min) of the drawn
        // logits; with 1e-3 noise this stays well under 1.01.
        let w = a.arch_weights();
        let (lo, hi) = w
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let amin = a.alpha.iter().copied().fold(f64::INFINITY, f64::min);
        let amax = a.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let oracle_ratio = libm::exp(amax - amin);
        assert!((hi / lo - oracle_ratio).abs() < 1e-12);
        assert!(hi / lo < 1.01, "spread {}", hi / lo);
    }

    #[test]
    fn mixture_stays_in_convex_hull_of_stub_outputs() {
        let mut edge = MixedEdge::new(
            "e",
            vec![constant_op(1, 0.25), constant_op(1, 0.5), constant_op(1, 2.0)],
        );
        edge.alpha = vec![0.3, -0.7, 1.1];
        let x = nonneg_tensor(1, 4, 4, 6);
        let (y, _) = edge.forward(&x);
        for &v in y.data() {
            assert!((0.25..=2.0).contains(&v));
        }
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        let mut r = rng::stream(21, "ops", &[]);
        let ops = build_candidate_set(2, &mut r).unwrap();
        let mut edge = MixedEdge::new("e", ops);
        let mut ra = rng::stream(21, "alpha", &[]);
        edge.init_alpha(&mut ra);
        edge.alpha = edge.alpha.iter().map(|a| a + 0.3).collect();
        let x = nonneg_tensor(2, 6, 6, 7);
        let probe = nonneg_tensor(2, 6, 6, 8);

        let (_, cache) = edge.forward(&x);
        let (dx, grads) = edge.backward(&cache, &probe);

        let res = check_gradient(&edge.alpha.clone(), &grads.alpha, 1e-6, 1e-6, |vals| {
            let mut e2 = edge.clone();
            e2.alpha = vals.to_vec();
            e2.forward(&x).0.dot(&probe)
        });
        assert!(res.max_rel_err < 1e-4, "alpha grad: {res:?}");

        let res = check_gradient(x.data(), dx.data(), 1e-6, 1e-6, |vals| {
            let xt = Tensor::from_vec(2, 6, 6, vals.to_vec()).unwrap();
            edge.forward(&xt).0.dot(&probe)
        });
        assert!(res.max_rel_err < 1e-4, "input grad: {res:?}");
    }
}
