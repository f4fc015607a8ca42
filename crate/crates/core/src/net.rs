//! The fusion network: a feature-attention merge of the two exposures
//! followed by a dual intensity/illumination stream, recombined
//! multiplicatively. Every interior node is a searchable edge.
//!
//! Three passes are implemented by hand: `forward` (with a cache),
//! `backward` (gradients w.r.t. the network parameters and the architecture
//! logits), and `jvp` (forward-mode directional derivative of the output
//! along a parameter tangent), which the loss-search step uses to avoid one
//! backward pass per loss candidate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conv::{
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward_from_output, Conv2d, ConvGrads,
};
use crate::data::ExposurePair;
use crate::error::{CoreError, CoreResult};
use crate::ops::{
    build_candidate_set, CandidateOp, EdgeCache, EdgeSnapshot, FinalCache, FinalizedEdge,
    MixedEdge, OpKind,
};
use crate::rng;
use crate::tensor::{Image, Tensor};

/// Structural hyperparameters of the fusion network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Feature width of every searchable edge.
    pub width: usize,
    /// Edges per stream block.
    pub stream_edges: usize,
    /// Iterations of each stream block (shared weights).
    pub t_iters: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width: 16,
            stream_edges: 2,
            t_iters: 3,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if self.width == 0 || self.stream_edges == 0 || self.t_iters == 0 {
            return Err(CoreError::InvalidConfig(
                "width, stream_edges, and t_iters must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A searchable position: mixed during search, frozen after retention.
#[derive(Debug, Clone)]
pub enum Edge {
    Mixed(MixedEdge),
    Finalized(FinalizedEdge),
}

impl Edge {
    pub fn name(&self) -> &str {
        match self {
            Edge::Mixed(e) => &e.name,
            Edge::Finalized(e) => &e.name,
        }
    }

    pub fn as_mixed(&self) -> Option<&MixedEdge> {
        match self {
            Edge::Mixed(e) => Some(e),
            Edge::Finalized(_) => None,
        }
    }

    pub fn as_mixed_mut(&mut self) -> Option<&mut MixedEdge> {
        match self {
            Edge::Mixed(e) => Some(e),
            Edge::Finalized(_) => None,
        }
    }

    fn ops(&self) -> impl Iterator<Item = &CandidateOp> {
        match self {
            Edge::Mixed(e) => e.ops.iter(),
            Edge::Finalized(e) => e.ops.iter(),
        }
    }

    fn ops_mut(&mut self) -> impl Iterator<Item = &mut CandidateOp> {
        match self {
            Edge::Mixed(e) => e.ops.iter_mut(),
            Edge::Finalized(e) => e.ops.iter_mut(),
        }
    }
}

#[derive(Debug)]
enum EdgeCacheAny {
    Mixed(EdgeCache),
    Final(FinalCache),
}

/// Per-parameter tensors keyed by convolution block name. Used both for
/// gradients and for forward-mode tangents.
pub type ParamTensors = BTreeMap<String, ConvGrads>;

/// Gradients of a scalar loss w.r.t. the network.
#[derive(Debug, Default)]
pub struct ModelGrads {
    /// Per convolution block (weights and bias).
    pub omega: ParamTensors,
    /// Per mixed edge, the live-logit gradient.
    pub alpha: BTreeMap<String, Vec<f64>>,
}

impl ModelGrads {
    pub fn add_scaled(&mut self, other: &ModelGrads, scale: f64) {
        for (name, g) in &other.omega {
            let slot = self.omega.entry(name.clone()).or_insert_with(|| ConvGrads {
                weights: alloc::vec![0.0; g.weights.len()],
                bias: alloc::vec![0.0; g.bias.len()],
            });
            for (a, &b) in slot.weights.iter_mut().zip(g.weights.iter()) {
                *a += scale * b;
            }
            for (a, &b) in slot.bias.iter_mut().zip(g.bias.iter()) {
                *a += scale * b;
            }
        }
        for (name, g) in &other.alpha {
            let slot = self
                .alpha
                .entry(name.clone())
                .or_insert_with(|| alloc::vec![0.0; g.len()]);
            for (a, &b) in slot.iter_mut().zip(g.iter()) {
                *a += scale * b;
            }
        }
    }

    /// Dot product of the omega parts (alpha ignored).
    pub fn omega_dot(&self, other: &ModelGrads) -> f64 {
        let mut acc = 0.0;
        for (name, g) in &self.omega {
            if let Some(h) = other.omega.get(name) {
                acc += g
                    .weights
                    .iter()
                    .zip(h.weights.iter())
                    .map(|(&a, &b)| a * b)
                    .sum::<f64>();
                acc += g
                    .bias
                    .iter()
                    .zip(h.bias.iter())
                    .map(|(&a, &b)| a * b)
                    .sum::<f64>();
            }
        }
        acc
    }
}

fn merge_conv_grads(store: &mut ParamTensors, name: &str, g: ConvGrads) {
    match store.get_mut(name) {
        Some(slot) => {
            for (a, b) in slot.weights.iter_mut().zip(g.weights.iter()) {
                *a += b;
            }
            for (a, b) in slot.bias.iter_mut().zip(g.bias.iter()) {
                *a += b;
            }
        }
        None => {
            store.insert(String::from(name), g);
        }
    }
}

fn merge_alpha(store: &mut BTreeMap<String, Vec<f64>>, name: &str, g: Vec<f64>) {
    match store.get_mut(name) {
        Some(slot) => {
            for (a, b) in slot.iter_mut().zip(g.iter()) {
                *a += b;
            }
        }
        None => {
            store.insert(String::from(name), g);
        }
    }
}

/// Forward cache for one `(under, over)` evaluation.
pub struct ForwardCache {
    under: Tensor,
    over: Tensor,
    stem_pre_u: Tensor,
    stem_pre_o: Tensor,
    enc_caches_u: Vec<EdgeCacheAny>,
    enc_caches_o: Vec<EdgeCacheAny>,
    enc_mid_u: Vec<Tensor>,
    enc_mid_o: Vec<Tensor>,
    enc_out_u: Tensor,
    enc_out_o: Tensor,
    att_u: Tensor,
    att_o: Tensor,
    merged: Tensor,
    int_caches: Vec<Vec<EdgeCacheAny>>,
    int_mid: Vec<Vec<Tensor>>,
    int_out: Tensor,
    ill_caches: Vec<Vec<EdgeCacheAny>>,
    ill_mid: Vec<Vec<Tensor>>,
    ill_out: Tensor,
    prod: Tensor,
    out: Tensor,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

/// The fusion model: supernet during search, finalized afterwards.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub cfg: NetConfig,
    stem: Conv2d,
    attn_enc: Vec<Edge>,
    head_under: Conv2d,
    head_over: Conv2d,
    intensity: Vec<Edge>,
    illumination: Vec<Edge>,
    head: Conv2d,
}

/// Canonical edge names for a configuration.
pub fn edge_names(cfg: &NetConfig) -> Vec<String> {
    let mut names = alloc::vec![String::from("attn.enc0"), String::from("attn.enc1")];
    for i in 0..cfg.stream_edges {
        names.push(format!("intensity.{i}"));
    }
    for i in 0..cfg.stream_edges {
        names.push(format!("illum.{i}"));
    }
    names
}

impl FusionModel {
    /// Fresh supernet with all candidates active on every edge.
    pub fn new_supernet(cfg: NetConfig, seed: u64) -> Self {
        let w = cfg.width;
        let mk_edge = |name: &String| {
            let mut r = rng::stream(seed, "omega-init", &[rng::fnv1a(name.as_bytes())]);
            let ops = build_candidate_set(w, &mut r).expect("width >= 1");
            let mut edge = MixedEdge::new(name.clone(), ops);
            let mut ra = rng::stream(seed, "alpha-init", &[rng::fnv1a(name.as_bytes())]);
            edge.init_alpha(&mut ra);
            Edge::Mixed(edge)
        };
        let names = edge_names(&cfg);
        let attn_enc = names[..2].iter().map(mk_edge).collect();
        let intensity = names[2..2 + cfg.stream_edges].iter().map(mk_edge).collect();
        let illumination = names[2 + cfg.stream_edges..].iter().map(mk_edge).collect();
        let conv_init = |name: &str, ic, oc, k| {
            let mut r = rng::stream(seed, "omega-init", &[rng::fnv1a(name.as_bytes())]);
            Conv2d::zeros(ic, oc, k, k, 1).init(&mut r)
        };
        FusionModel {
            cfg,
            stem: conv_init("stem", 3, w, 3),
            attn_enc,
            head_under: conv_init("attn.head_under", w, 1, 1),
            head_over: conv_init("attn.head_over", w, 1, 1),
            intensity,
            illumination,
            head: conv_init("head", w, 3, 1),
        }
    }

    /// Finalized network from retained `(kind, weight)` lists per edge, with
    /// freshly initialized trainable parameters.
    pub fn new_finalized(
        cfg: NetConfig,
        retained: &[(String, Vec<(OpKind, f64)>)],
        seed: u64,
    ) -> CoreResult<Self> {
        cfg.validate()?;
        let names = edge_names(&cfg);
        if retained.len() != names.len()
            || retained.iter().zip(names.iter()).any(|((n, _), e)| n != e)
        {
            return Err(CoreError::InvalidConfig(format!(
                "finalized edges {:?} do not match configuration {:?}",
                retained.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
                names
            )));
        }
        let w = cfg.width;
        let mk_edge = |(name, kinds): &(String, Vec<(OpKind, f64)>)| -> CoreResult<Edge> {
            if kinds.is_empty() {
                return Err(CoreError::InvalidConfig(format!(
                    "edge {name} retains no operations"
                )));
            }
            let mut ops = Vec::with_capacity(kinds.len());
            for (kind, _) in kinds {
                let mut r = rng::stream(
                    seed,
                    "omega-init",
                    &[rng::fnv1a(name.as_bytes()), rng::fnv1a(kind.name().as_bytes())],
                );
                ops.push(CandidateOp::new(*kind, w).init(&mut r));
            }
            Ok(Edge::Finalized(FinalizedEdge {
                name: name.clone(),
                retained: kinds.clone(),
                ops,
                source_alpha: Vec::new(),
            }))
        };
        let conv_init = |name: &str, ic, oc, k| {
            let mut r = rng::stream(seed, "omega-init", &[rng::fnv1a(name.as_bytes())]);
            Conv2d::zeros(ic, oc, k, k, 1).init(&mut r)
        };
        let attn_enc: CoreResult<Vec<Edge>> = retained[..2].iter().map(mk_edge).collect();
        let intensity: CoreResult<Vec<Edge>> =
            retained[2..2 + cfg.stream_edges].iter().map(mk_edge).collect();
        let illumination: CoreResult<Vec<Edge>> =
            retained[2 + cfg.stream_edges..].iter().map(mk_edge).collect();
        Ok(FusionModel {
            cfg,
            stem: conv_init("stem", 3, w, 3),
            attn_enc: attn_enc?,
            head_under: conv_init("attn.head_under", w, 1, 1),
            head_over: conv_init("attn.head_over", w, 1, 1),
            intensity: intensity?,
            illumination: illumination?,
            head: conv_init("head", w, 3, 1),
        })
    }

    pub fn is_supernet(&self) -> bool {
        self.all_edges().iter().all(|e| e.as_mixed().is_some())
    }

    fn all_edges(&self) -> Vec<&Edge> {
        self.attn_enc
            .iter()
            .chain(self.intensity.iter())
            .chain(self.illumination.iter())
            .collect()
    }

    pub fn mixed_edges_mut(&mut self) -> Vec<&mut MixedEdge> {
        self.attn_enc
            .iter_mut()
            .chain(self.intensity.iter_mut())
            .chain(self.illumination.iter_mut())
            .filter_map(Edge::as_mixed_mut)
            .collect()
    }

    pub fn mixed_edges(&self) -> Vec<&MixedEdge> {
        self.all_edges()
            .into_iter()
            .filter_map(Edge::as_mixed)
            .collect()
    }

    /// Snapshots of the searchable state, in canonical edge order.
    pub fn edge_snapshots(&self) -> Vec<EdgeSnapshot> {
        self.mixed_edges().iter().map(|e| EdgeSnapshot::of(e)).collect()
    }

    /// Visit every trainable convolution with its stable name.
    pub fn visit_convs(&self, f: &mut dyn FnMut(&str, &Conv2d)) {
        f("stem", &self.stem);
        for edge in self.all_edges() {
            let name = String::from(edge.name());
            let kinds: Vec<OpKind> = edge.ops().map(|o| o.kind).collect();
            for (op, kind) in edge.ops().zip(kinds.iter()) {
                f(&format!("{name}.{}", kind.name()), &op.conv);
            }
        }
        f("attn.head_under", &self.head_under);
        f("attn.head_over", &self.head_over);
        f("head", &self.head);
    }

    pub fn visit_convs_mut(&mut self, f: &mut dyn FnMut(&str, &mut Conv2d)) {
        f("stem", &mut self.stem);
        let mut edges: Vec<&mut Edge> = self
            .attn_enc
            .iter_mut()
            .chain(self.intensity.iter_mut())
            .chain(self.illumination.iter_mut())
            .collect();
        for edge in edges.iter_mut() {
            let name = String::from(edge.name());
            for op in edge.ops_mut() {
                let full = format!("{name}.{}", op.kind.name());
                f(&full, &mut op.conv);
            }
        }
        f("attn.head_under", &mut self.head_under);
        f("attn.head_over", &mut self.head_over);
        f("head", &mut self.head);
    }

    /// Flat copy of all trainable parameters, keyed by block name.
    pub fn omega_snapshot(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit_convs(&mut |name, conv| {
            let mut v = conv.weights.clone();
            v.extend_from_slice(&conv.bias);
            out.push((String::from(name), v));
        });
        out
    }

    /// Flat copy of all live architecture logits, keyed by edge name.
    pub fn alpha_snapshot(&self) -> Vec<(String, Vec<f64>)> {
        self.mixed_edges()
            .iter()
            .map(|e| (e.name.clone(), e.alpha.clone()))
            .collect()
    }

    fn edge_forward(edge: &Edge, x: &Tensor) -> (Tensor, EdgeCacheAny) {
        match edge {
            Edge::Mixed(e) => {
                let (y, c) = e.forward(x);
                (y, EdgeCacheAny::Mixed(c))
            }
            Edge::Finalized(e) => {
                let (y, c) = e.forward(x);
                (y, EdgeCacheAny::Final(c))
            }
        }
    }

    fn edge_backward(
        edge: &Edge,
        cache: &EdgeCacheAny,
        dy: &Tensor,
        grads: &mut ModelGrads,
    ) -> Tensor {
        let name = String::from(edge.name());
        match (edge, cache) {
            (Edge::Mixed(e), EdgeCacheAny::Mixed(c)) => {
                let (dx, g) = e.backward(c, dy);
                for (idx, cg) in g.conv {
                    let kind = e.ops[idx].kind.name();
                    merge_conv_grads(&mut grads.omega, &format!("{name}.{kind}"), cg);
                }
                merge_alpha(&mut grads.alpha, &name, g.alpha);
                dx
            }
            (Edge::Finalized(e), EdgeCacheAny::Final(c)) => {
                let (dx, gs) = e.backward(c, dy);
                for (op, cg) in e.ops.iter().zip(gs) {
                    merge_conv_grads(
                        &mut grads.omega,
                        &format!("{name}.{}", op.kind.name()),
                        cg,
                    );
                }
                dx
            }
            _ => unreachable!("cache kind matches edge kind"),
        }
    }

    /// Forward pass with the full cache.
    pub fn forward_cached(&self, under: &Tensor, over: &Tensor) -> CoreResult<ForwardCache> {
        under.check_same_shape(over, "fusion inputs")?;
        if under.channels() != 3 {
            return Err(CoreError::ShapeMismatch(format!(
                "fusion expects 3-channel inputs, got {}",
                under.channels()
            )));
        }
        let stem_pre_u = self.stem.forward(under);
        let stem_pre_o = self.stem.forward(over);
        let mut xu = leaky_relu(&stem_pre_u);
        let mut xo = leaky_relu(&stem_pre_o);

        // Shared encoder: the same edges process both sources.
        let mut enc_caches_u = Vec::new();
        let mut enc_caches_o = Vec::new();
        let mut enc_mid_u = Vec::new();
        let mut enc_mid_o = Vec::new();
        for edge in &self.attn_enc {
            enc_mid_u.push(xu.clone());
            enc_mid_o.push(xo.clone());
            let (yu, cu) = Self::edge_forward(edge, &xu);
            let (yo, co) = Self::edge_forward(edge, &xo);
            xu = yu;
            xo = yo;
            enc_caches_u.push(cu);
            enc_caches_o.push(co);
        }

        // Per-source attention heads, two-way softmax per pixel.
        let zu = self.head_under.forward(&xu);
        let zo = self.head_over.forward(&xo);
        let att_u = zu.zip(&zo, |a, b| crate::fmath::sigmoid(a - b));
        let att_o = att_u.map(|v| 1.0 - v);

        let (h, w) = (under.height(), under.width());
        let mut merged = Tensor::zeros(self.cfg.width, h, w);
        for c in 0..self.cfg.width {
            let mu = xu.plane(c);
            let mo = xo.plane(c);
            let au = att_u.plane(0);
            let ao = att_o.plane(0);
            let mp = merged.plane_mut(c);
            for i in 0..h * w {
                mp[i] = au[i] * mu[i] + ao[i] * mo[i];
            }
        }

        // Dual streams, each iterated with shared weights.
        let run_stream = |edges: &[Edge], input: &Tensor| {
            let mut caches = Vec::new();
            let mut mids = Vec::new();
            let mut x = input.clone();
            for _ in 0..self.cfg.t_iters {
                let mut tc = Vec::new();
                let mut tm = Vec::new();
                for edge in edges {
                    tm.push(x.clone());
                    let (y, c) = Self::edge_forward(edge, &x);
                    x = y;
                    tc.push(c);
                }
                caches.push(tc);
                mids.push(tm);
            }
            (x, caches, mids)
        };
        let (int_out, int_caches, int_mid) = run_stream(&self.intensity, &merged);
        let (ill_pre, ill_caches, ill_mid) = run_stream(&self.illumination, &merged);
        let ill_out = sigmoid(&ill_pre);

        let prod = int_out.zip(&ill_out, |a, b| a * b);
        let head_pre = self.head.forward(&prod);
        let out = sigmoid(&head_pre);

        Ok(ForwardCache {
            under: under.clone(),
            over: over.clone(),
            stem_pre_u,
            stem_pre_o,
            enc_caches_u,
            enc_caches_o,
            enc_mid_u,
            enc_mid_o,
            enc_out_u: xu,
            enc_out_o: xo,
            att_u,
            att_o,
            merged,
            int_caches,
            int_mid,
            int_out,
            ill_caches,
            ill_mid,
            ill_out,
            prod,
            out,
        })
    }

    /// Fuse a pair into an output image.
    pub fn forward(&self, pair: &ExposurePair) -> CoreResult<Image> {
        let cache = self.forward_cached(&pair.under, &pair.over)?;
        Image::new(cache.out)
    }

    /// The attention-merged feature representation of the two sources.
    pub fn attention_merge(&self, under: &Tensor, over: &Tensor) -> CoreResult<Tensor> {
        Ok(self.forward_cached(under, over)?.merged)
    }

    /// Attention maps `(a_under, a_over)`; they sum to one at every pixel.
    pub fn attention_maps(&self, under: &Tensor, over: &Tensor) -> CoreResult<(Tensor, Tensor)> {
        let c = self.forward_cached(under, over)?;
        Ok((c.att_u, c.att_o))
    }

    /// Iterated intensity-stream features for a merged input.
    pub fn intensity_stream(&self, f: &Tensor) -> Tensor {
        let mut x = f.clone();
        for _ in 0..self.cfg.t_iters {
            for edge in &self.intensity {
                x = Self::edge_forward(edge, &x).0;
            }
        }
        x
    }

    /// Iterated illumination-stream features, squashed into `(0, 1)`.
    pub fn illumination_stream(&self, f: &Tensor) -> Tensor {
        let mut x = f.clone();
        for _ in 0..self.cfg.t_iters {
            for edge in &self.illumination {
                x = Self::edge_forward(edge, &x).0;
            }
        }
        sigmoid(&x)
    }

    /// Multiply the stream outputs and map through the fixed head.
    pub fn compose_output(&self, intensity: &Tensor, illumination: &Tensor) -> CoreResult<Image> {
        intensity.check_same_shape(illumination, "compose inputs")?;
        let prod = intensity.zip(illumination, |a, b| a * b);
        Image::new(sigmoid(&self.head.forward(&prod)))
    }

    /// Backward pass from a gradient w.r.t. the output image.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Tensor) -> ModelGrads {
        let mut grads = ModelGrads::default();
        let d_head_pre = sigmoid_backward_from_output(&cache.out, d_out);
        let (d_prod, g_head) = self.head.backward(&cache.prod, &d_head_pre);
        merge_conv_grads(&mut grads.omega, "head", g_head);

        let d_int = d_prod.zip(&cache.ill_out, |g, b| g * b);
        let d_ill_out = d_prod.zip(&cache.int_out, |g, a| g * a);
        let d_ill_pre = sigmoid_backward_from_output(&cache.ill_out, &d_ill_out);

        let run_stream_back = |edges: &[Edge],
                               caches: &Vec<Vec<EdgeCacheAny>>,
                               seed: &Tensor,
                               grads: &mut ModelGrads| {
            let mut d = seed.clone();
            for t in (0..caches.len()).rev() {
                for k in (0..edges.len()).rev() {
                    d = Self::edge_backward(&edges[k], &caches[t][k], &d, grads);
                }
            }
            d
        };
        let d_m_int = run_stream_back(&self.intensity, &cache.int_caches, &d_int, &mut grads);
        let d_m_ill = run_stream_back(&self.illumination, &cache.ill_caches, &d_ill_pre, &mut grads);
        let mut d_merged = d_m_int;
        d_merged.add_scaled(&d_m_ill, 1.0);

        // Merge backward: m_c = a_u x_u,c + a_o x_o,c.
        let (h, w) = (cache.under.height(), cache.under.width());
        let mut d_xu = Tensor::zeros(self.cfg.width, h, w);
        let mut d_xo = Tensor::zeros(self.cfg.width, h, w);
        let mut d_au = Tensor::zeros(1, h, w);
        let mut d_ao = Tensor::zeros(1, h, w);
        {
            let au = cache.att_u.plane(0);
            let ao = cache.att_o.plane(0);
            let dau = d_au.plane_mut(0);
            let dao = d_ao.plane_mut(0);
            for c in 0..self.cfg.width {
                let dm = d_merged.plane(c);
                let xu = cache.enc_out_u.plane(c);
                let xo = cache.enc_out_o.plane(c);
                let dxu = d_xu.plane_mut(c);
                let dxo = d_xo.plane_mut(c);
                for i in 0..h * w {
                    dxu[i] += au[i] * dm[i];
                    dxo[i] += ao[i] * dm[i];
                    dau[i] += dm[i] * xu[i];
                    dao[i] += dm[i] * xo[i];
                }
            }
        }
        // Two-way softmax backward: a_u = sigma(z_u - z_o), a_o = 1 - a_u.
        let mut d_zu = Tensor::zeros(1, h, w);
        {
            let au = cache.att_u.plane(0);
            let dau = d_au.plane(0);
            let dao = d_ao.plane(0);
            let dzu = d_zu.plane_mut(0);
            for i in 0..h * w {
                let s = au[i] * (1.0 - au[i]);
                dzu[i] = s * (dau[i] - dao[i]);
            }
        }
        let d_zo = d_zu.map(|v| -v);

        let (d_xu_head, g_hu) = self.head_under.backward(&cache.enc_out_u, &d_zu);
        merge_conv_grads(&mut grads.omega, "attn.head_under", g_hu);
        let (d_xo_head, g_ho) = self.head_over.backward(&cache.enc_out_o, &d_zo);
        merge_conv_grads(&mut grads.omega, "attn.head_over", g_ho);
        d_xu.add_scaled(&d_xu_head, 1.0);
        d_xo.add_scaled(&d_xo_head, 1.0);

        // Shared encoder backward for both sources.
        let mut du = d_xu;
        let mut dobj = d_xo;
        for k in (0..self.attn_enc.len()).rev() {
            du = Self::edge_backward(&self.attn_enc[k], &cache.enc_caches_u[k], &du, &mut grads);
            dobj = Self::edge_backward(&self.attn_enc[k], &cache.enc_caches_o[k], &dobj, &mut grads);
        }

        let d_stem_pre_u = leaky_relu_backward(&cache.stem_pre_u, &du);
        let d_stem_pre_o = leaky_relu_backward(&cache.stem_pre_o, &dobj);
        let (_, g_stem_u) = self.stem.backward(&cache.under, &d_stem_pre_u);
        merge_conv_grads(&mut grads.omega, "stem", g_stem_u);
        let (_, g_stem_o) = self.stem.backward(&cache.over, &d_stem_pre_o);
        merge_conv_grads(&mut grads.omega, "stem", g_stem_o);
        grads
    }

    /// Zero-valued tangent/gradient container shaped like this model.
    pub fn zero_param_tensors(&self) -> ParamTensors {
        let mut out = ParamTensors::new();
        self.visit_convs(&mut |name, conv| {
            out.insert(
                String::from(name),
                ConvGrads {
                    weights: alloc::vec![0.0; conv.weights.len()],
                    bias: alloc::vec![0.0; conv.bias.len()],
                },
            );
        });
        out
    }

    fn conv_jvp(conv: &Conv2d, name: &str, x: &Tensor, tx: Option<&Tensor>, t: &ParamTensors) -> Tensor {
        // d(conv_W(x) + b) = conv_dW(x) + conv_W(dx) + db
        let mut out = match t.get(name) {
            Some(tg) => {
                let mut tconv = conv.clone();
                tconv.weights.copy_from_slice(&tg.weights);
                tconv.bias.copy_from_slice(&tg.bias);
                tconv.forward(x)
            }
            None => Tensor::zeros(conv.out_ch, x.height(), x.width()),
        };
        if let Some(tx) = tx {
            let mut wonly = conv.clone();
            for b in &mut wonly.bias {
                *b = 0.0;
            }
            out.add_scaled(&wonly.forward(tx), 1.0);
        }
        out
    }

    fn edge_jvp(
        edge: &Edge,
        cache: &EdgeCacheAny,
        x: &Tensor,
        tx: &Tensor,
        t: &ParamTensors,
    ) -> Tensor {
        let name = String::from(edge.name());
        match (edge, cache) {
            (Edge::Mixed(e), EdgeCacheAny::Mixed(c)) => {
                let weights = e.arch_weights();
                let mut out: Option<Tensor> = None;
                for (j, &i) in e.active_indices().iter().enumerate() {
                    let op = &e.ops[i];
                    let tpre = Self::conv_jvp(
                        &op.conv,
                        &format!("{name}.{}", op.kind.name()),
                        x,
                        Some(tx),
                        t,
                    );
                    let tu = c.pre(j).zip(&tpre, |z, g| if z >= 0.0 { g } else { 0.2 * g });
                    match &mut out {
                        None => {
                            let mut first = tu;
                            first.scale(weights[j]);
                            out = Some(first);
                        }
                        Some(acc) => acc.add_scaled(&tu, weights[j]),
                    }
                }
                out.expect("edge has active candidates")
            }
            (Edge::Finalized(e), EdgeCacheAny::Final(c)) => {
                let mut out: Option<Tensor> = None;
                for (j, (op, &(_, wgt))) in e.ops.iter().zip(e.retained.iter()).enumerate() {
                    let tpre = Self::conv_jvp(
                        &op.conv,
                        &format!("{name}.{}", op.kind.name()),
                        x,
                        Some(tx),
                        t,
                    );
                    let tu = c.pre(j).zip(&tpre, |z, g| if z >= 0.0 { g } else { 0.2 * g });
                    match &mut out {
                        None => {
                            let mut first = tu;
                            first.scale(wgt);
                            out = Some(first);
                        }
                        Some(acc) => acc.add_scaled(&tu, wgt),
                    }
                }
                out.expect("finalized edge retains ops")
            }
            _ => unreachable!("cache kind matches edge kind"),
        }
    }

    /// Forward-mode directional derivative of the output along the parameter
    /// tangent `t` (architecture logits held fixed), reusing a cache.
    pub fn jvp(&self, cache: &ForwardCache, t: &ParamTensors) -> Tensor {
        let t_stem_pre_u = Self::conv_jvp(&self.stem, "stem", &cache.under, None, t);
        let t_stem_pre_o = Self::conv_jvp(&self.stem, "stem", &cache.over, None, t);
        let mut txu = leaky_relu_backward(&cache.stem_pre_u, &t_stem_pre_u);
        let mut txo = leaky_relu_backward(&cache.stem_pre_o, &t_stem_pre_o);

        for (k, edge) in self.attn_enc.iter().enumerate() {
            txu = Self::edge_jvp(edge, &cache.enc_caches_u[k], &cache.enc_mid_u[k], &txu, t);
            txo = Self::edge_jvp(edge, &cache.enc_caches_o[k], &cache.enc_mid_o[k], &txo, t);
        }
        let t_zu = Self::conv_jvp(&self.head_under, "attn.head_under", &cache.enc_out_u, Some(&txu), t);
        let t_zo = Self::conv_jvp(&self.head_over, "attn.head_over", &cache.enc_out_o, Some(&txo), t);

        let (h, w) = (cache.under.height(), cache.under.width());
        let mut t_merged = Tensor::zeros(self.cfg.width, h, w);
        {
            let au = cache.att_u.plane(0);
            let tzu = t_zu.plane(0);
            let tzo = t_zo.plane(0);
            for c in 0..self.cfg.width {
                let xu = cache.enc_out_u.plane(c);
                let xo = cache.enc_out_o.plane(c);
                let txup = txu.plane(c);
                let txop = txo.plane(c);
                let tm = t_merged.plane_mut(c);
                for i in 0..h * w {
                    let s = au[i] * (1.0 - au[i]);
                    let t_au = s * (tzu[i] - tzo[i]);
                    tm[i] = t_au * xu[i] + au[i] * txup[i] - t_au * xo[i]
                        + (1.0 - au[i]) * txop[i];
                }
            }
        }

        let stream_jvp = |edges: &[Edge],
                          caches: &Vec<Vec<EdgeCacheAny>>,
                          mids: &Vec<Vec<Tensor>>,
                          seed: &Tensor| {
            let mut tx = seed.clone();
            for tpos in 0..caches.len() {
                for (k, edge) in edges.iter().enumerate() {
                    tx = Self::edge_jvp(edge, &caches[tpos][k], &mids[tpos][k], &tx, t);
                }
            }
            tx
        };
        let t_int = stream_jvp(&self.intensity, &cache.int_caches, &cache.int_mid, &t_merged);
        let t_ill_pre = stream_jvp(&self.illumination, &cache.ill_caches, &cache.ill_mid, &t_merged);
        let t_ill = cache.ill_out.zip(&t_ill_pre, |s, g| g * s * (1.0 - s));

        let mut t_prod = cache.int_out.zip(&t_ill, |a, g| a * g);
        t_prod.add_scaled(&cache.ill_out.zip(&t_int, |b, g| b * g), 1.0);

        let t_head_pre = Self::conv_jvp(&self.head, "head", &cache.prod, Some(&t_prod), t);
        cache.out.zip(&t_head_pre, |s, g| g * s * (1.0 - s))
    }

    /// Apply `delta * scale` to the parameters (plain additive update).
    pub fn apply_param_delta(&mut self, delta: &ParamTensors, scale: f64) {
        self.visit_convs_mut(&mut |name, conv| {
            if let Some(d) = delta.get(name) {
                for (w, &g) in conv.weights.iter_mut().zip(d.weights.iter()) {
                    *w += scale * g;
                }
                for (b, &g) in conv.bias.iter_mut().zip(d.bias.iter()) {
                    *b += scale * g;
                }
            }
        });
    }
}
