//! The dual-search driver: alternating first-order updates of the network
//! parameters (training loss), the loss logits (contrastive constraint on
//! validation data), and the architecture logits (validation loss), with
//! per-epoch pruning; plus the post-search plain trainer.
//!
//! The loss-logit step differentiates through a one-step truncated response:
//! a virtual plain-gradient update of the network under the current weighted
//! loss, evaluated with one backward pass and one forward-mode directional
//! derivative instead of one backward pass per loss candidate.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::contrastive;
use crate::data::{epoch_batches, random_crop_pair, sample_natural, split_half_by_hash, ExposurePair, NaturalPool};
use crate::error::{CoreError, CoreResult};
use crate::loss::{self, LossCtx, LossParams, CATALOG};
use crate::net::{FusionModel, ModelGrads, NetConfig};
use crate::ops::{EdgeSnapshot, OpKind};
use crate::rng;
use crate::tensor::{Image, Tensor};
use crate::wsras::{self, PruneEvent, WsrasConfig};

/// Settings of the dual search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub lr_alpha: f64,
    pub lr_beta: f64,
    pub lr_omega: f64,
    pub search_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub crop: usize,
    pub wsras: WsrasConfig,
    pub net: NetConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lr_alpha: 2e-1,
            lr_beta: 3e-2,
            lr_omega: 2e-4,
            search_epochs: 10,
            batch_size: 2,
            seed: 0,
            crop: 256,
            wsras: WsrasConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if self.lr_alpha <= 0.0 || self.lr_beta <= 0.0 || self.lr_omega <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.search_epochs == 0 {
            return Err(CoreError::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        self.net.validate()
    }
}

/// Settings of the post-search trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub crop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 10,
            lr: 1e-4,
            seed: 0,
            crop: 256,
        }
    }
}

/// Adam over named parameter vectors, with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Advance the shared step counter; call once per optimizer step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Update one named parameter vector in place.
    pub fn update(&mut self, key: &str, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        let m = self
            .m
            .entry(String::from(key))
            .or_insert_with(|| alloc::vec![0.0; params.len()]);
        let v = self
            .v
            .entry(String::from(key))
            .or_insert_with(|| alloc::vec![0.0; params.len()]);
        let bc1 = 1.0 - crate::fmath::powf(self.beta1, self.t as f64);
        let bc2 = 1.0 - crate::fmath::powf(self.beta2, self.t as f64);
        for i in 0..params.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            params[i] -= self.lr * mhat / (crate::fmath::sqrt(vhat) + self.eps);
        }
    }

    /// Drop one coordinate of a named slot (after a candidate was pruned).
    pub fn remove_index(&mut self, key: &str, index: usize) {
        if let Some(m) = self.m.get_mut(key) {
            if index < m.len() {
                m.remove(index);
            }
        }
        if let Some(v) = self.v.get_mut(key) {
            if index < v.len() {
                v.remove(index);
            }
        }
    }

    /// Iterate over the internal state, for checkpointing.
    pub fn state(&self) -> impl Iterator<Item = (&String, &Vec<f64>, &Vec<f64>)> {
        self.m
            .iter()
            .map(move |(k, m)| (k, m, self.v.get(k).expect("m and v share keys")))
    }

    /// Rebuild an optimizer from checkpointed state.
    pub fn restore(
        lr: f64,
        t: u64,
        slots: impl IntoIterator<Item = (String, Vec<f64>, Vec<f64>)>,
    ) -> Self {
        let mut adam = Adam::new(lr);
        adam.t = t;
        for (k, m, v) in slots {
            adam.m.insert(k.clone(), m);
            adam.v.insert(k, v);
        }
        adam
    }
}

/// One row of the search history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_train: f64,
    pub l_val: f64,
    pub gamma_h: f64,
}

/// Mutable state of a running search.
pub struct SearchState {
    pub cfg: SearchConfig,
    pub step: u64,
    pub epoch: usize,
    pub model: FusionModel,
    pub loss: LossParams,
    pub history: Vec<HistoryRecord>,
    pub prune_log: Vec<PruneEvent>,
    pub adam_omega: Adam,
    pub adam_beta: Adam,
    pub adam_alpha: Adam,
}

impl SearchState {
    pub fn new(cfg: SearchConfig) -> CoreResult<Self> {
        cfg.validate()?;
        Ok(SearchState {
            step: 0,
            epoch: 0,
            model: FusionModel::new_supernet(cfg.net, rng::derive_seed(cfg.seed, "search-model", &[])),
            loss: LossParams::uniform(),
            history: Vec::new(),
            prune_log: Vec::new(),
            adam_omega: Adam::new(cfg.lr_omega),
            adam_beta: Adam::new(cfg.lr_beta),
            adam_alpha: Adam::new(cfg.lr_alpha),
            cfg,
        })
    }
}

fn ensure_finite(value: f64, what: &str) -> CoreResult<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CoreError::NonFiniteLoss(String::from(what)))
    }
}

fn apply_omega(model: &mut FusionModel, adam: &mut Adam, grads: &ModelGrads) {
    adam.begin_step();
    model.visit_convs_mut(&mut |name, conv| {
        if let Some(g) = grads.omega.get(name) {
            adam.update(&alloc::format!("{name}.w"), &mut conv.weights, &g.weights);
            adam.update(&alloc::format!("{name}.b"), &mut conv.bias, &g.bias);
        }
    });
}

/// Lower-level update: one Adam step of the network parameters under the
/// current loss weighting on a training batch. Touches nothing else.
pub fn step_omega(
    state: &mut SearchState,
    batch: &[ExposurePair],
    ctx: &LossCtx,
) -> CoreResult<f64> {
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = ModelGrads::default();
    for pair in batch {
        let cache = state.model.forward_cached(&pair.under, &pair.over)?;
        let (value, dout) = loss::combine_with_grad(&state.loss, pair, cache.output(), ctx)?;
        total += ensure_finite(value, "training loss")? * inv;
        let g = state.model.backward(&cache, &dout);
        grads.add_scaled(&g, inv);
    }
    apply_omega(&mut state.model, &mut state.adam_omega, &grads);
    Ok(total)
}

/// Upper-level update of the loss logits through the one-step truncated
/// response, evaluated on a validation batch. Returns the constraint value.
///
/// The virtual network update uses plain gradient descent at the network
/// learning rate and is discarded afterwards; no second derivatives are
/// formed anywhere.
pub fn step_beta(
    state: &mut SearchState,
    val_batch: &[ExposurePair],
    natural: &Image,
    ctx: &LossCtx,
) -> CoreResult<f64> {
    let (gamma_total, dbeta) = beta_gradient(state, val_batch, natural, ctx)?;
    state.adam_beta.begin_step();
    state.adam_beta.update("beta", &mut state.loss.beta, &dbeta);
    Ok(gamma_total)
}

/// The constraint value and its gradient w.r.t. the loss logits under the
/// one-step truncated response, without applying any update.
pub fn beta_gradient(
    state: &SearchState,
    val_batch: &[ExposurePair],
    natural: &Image,
    ctx: &LossCtx,
) -> CoreResult<(f64, Vec<f64>)> {
    let b = val_batch.len() as f64;
    let inv = 1.0 / b;

    // Pass 1 (current parameters): per pair, every candidate value and its
    // fused-image gradient; accumulate the mixed training-loss direction.
    struct PairEval {
        cache: crate::net::ForwardCache,
        mask: [bool; 17],
        weights: Vec<f64>,
        cand_grads: Vec<Option<Tensor>>,
    }
    let mut evals = Vec::with_capacity(val_batch.len());
    let mut virtual_dir = ModelGrads::default();
    for pair in val_batch {
        let cache = state.model.forward_cached(&pair.under, &pair.over)?;
        let mask = loss::evaluable_mask(pair);
        let weights = loss::combined_weights(&state.loss, &mask)?;
        let mut cand_grads: Vec<Option<Tensor>> = alloc::vec![None; CATALOG.len()];
        let mut seed = Tensor::zeros(3, pair.height(), pair.width());
        for (k, cand) in CATALOG.iter().enumerate() {
            if !mask[k] {
                continue;
            }
            let (value, g) = loss::eval_candidate_grad(cand, pair, cache.output(), ctx)?;
            ensure_finite(value, cand.name())?;
            seed.add_scaled(&g, weights[k]);
            cand_grads[k] = Some(g);
        }
        let g = state.model.backward(&cache, &seed);
        virtual_dir.add_scaled(&g, inv);
        evals.push(PairEval {
            cache,
            mask,
            weights,
            cand_grads,
        });
    }

    // Pass 2: virtual one-step response, then the constraint and its
    // network gradient at the displaced parameters.
    let mut virtual_model = state.model.clone();
    virtual_model.apply_param_delta(&virtual_dir.omega, -state.cfg.lr_omega);
    let negatives: Vec<(&Tensor, &Tensor)> = val_batch
        .iter()
        .map(|p| (p.under.tensor(), p.over.tensor()))
        .collect();
    let mut gamma_total = 0.0;
    let mut h = ModelGrads::default();
    for pair in val_batch {
        let cache = virtual_model.forward_cached(&pair.under, &pair.over)?;
        let (value, dgamma) = contrastive::gamma_h_with_grad(
            ctx.extractor,
            cache.output(),
            pair.reference.as_ref().map(|r| r.tensor()),
            natural,
            &negatives,
        )?;
        gamma_total += ensure_finite(value, "contrastive constraint")? * inv;
        let g = virtual_model.backward(&cache, &dgamma);
        h.add_scaled(&g, inv);
    }

    // Pass 3 (current parameters): directional derivative of each pair's
    // fused image along h, then the chain into the loss logits.
    let mut dbeta = alloc::vec![0.0; CATALOG.len()];
    for (pair_eval, _pair) in evals.iter().zip(val_batch.iter()) {
        let u = state.model.jvp(&pair_eval.cache, &h.omega);
        let mut c = alloc::vec![0.0; CATALOG.len()];
        for k in 0..CATALOG.len() {
            if let Some(g) = &pair_eval.cand_grads[k] {
                c[k] = g.dot(&u);
            }
        }
        // Masked softmax jacobian: dw_k/dbeta_j = w_j (c_j - sum_k w_k c_k).
        let cdot: f64 = pair_eval
            .weights
            .iter()
            .zip(c.iter())
            .map(|(&w, &ck)| w * ck)
            .sum();
        for j in 0..CATALOG.len() {
            if pair_eval.mask[j] {
                dbeta[j] += -state.cfg.lr_omega * inv * pair_eval.weights[j] * (c[j] - cdot);
            }
        }
    }
    for g in &dbeta {
        ensure_finite(*g, "loss-logit gradient")?;
    }
    Ok((gamma_total, dbeta))
}

/// Upper-level update of the architecture logits: one Adam step against the
/// validation fusion loss with the network parameters held constant.
pub fn step_alpha(
    state: &mut SearchState,
    val_batch: &[ExposurePair],
    ctx: &LossCtx,
) -> CoreResult<f64> {
    let inv = 1.0 / val_batch.len() as f64;
    let mut total = 0.0;
    let mut grads = ModelGrads::default();
    for pair in val_batch {
        let cache = state.model.forward_cached(&pair.under, &pair.over)?;
        let (value, dout) = loss::combine_with_grad(&state.loss, pair, cache.output(), ctx)?;
        total += ensure_finite(value, "validation loss")? * inv;
        let g = state.model.backward(&cache, &dout);
        grads.add_scaled(&g, inv);
    }
    state.adam_alpha.begin_step();
    for edge in state.model.mixed_edges_mut() {
        if let Some(g) = grads.alpha.get(&edge.name) {
            ensure_finite(g.iter().sum(), "architecture gradient")?;
            state.adam_alpha.update(&edge.name, &mut edge.alpha, g);
        }
    }
    Ok(total)
}

/// Run the pruning pass and keep the optimizer state aligned with the
/// shrunken logit vectors.
pub fn prune_epoch(state: &mut SearchState) -> Vec<PruneEvent> {
    let step = state.step;
    let before: Vec<(String, Vec<usize>, Vec<OpKind>)> = state
        .model
        .mixed_edges()
        .iter()
        .map(|e| {
            (
                e.name.clone(),
                e.active_indices(),
                e.ops.iter().map(|o| o.kind).collect(),
            )
        })
        .collect();
    let cfg = state.cfg.wsras;
    let mut edges = state.model.mixed_edges_mut();
    let events = wsras::prune_step(&mut edges, &cfg, step);
    drop(edges);
    for ev in &events {
        if let Some((_, old_active, kinds)) = before.iter().find(|(n, _, _)| *n == ev.edge_name) {
            // Live position of the pruned candidate before removal, so the
            // optimizer slot shrinks in lockstep with the logit vector.
            if let Some(pos) = old_active
                .iter()
                .position(|&i| kinds[i] == ev.pruned_kind)
            {
                state.adam_alpha.remove_index(&ev.edge_name, pos);
            }
        }
    }
    state.prune_log.extend(events.clone());
    events
}

/// Everything the search emits.
#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Mixed-edge state at the end of the search.
    pub arch_snapshots: Vec<EdgeSnapshot>,
    /// Retained `(kind, frozen weight)` per edge, canonical order.
    pub retained: Vec<(String, Vec<(OpKind, f64)>)>,
    pub loss: LossParams,
    pub history: Vec<HistoryRecord>,
    pub prune_log: Vec<PruneEvent>,
}

/// The full dual search over a dataset.
///
/// Half of the pairs (by hashed id) form the training split for the network
/// update; the other half serve the two upper-level updates. Pruning runs
/// once per epoch after the architecture update.
pub fn run_search(
    cfg: &SearchConfig,
    pairs: &[ExposurePair],
    pool: &NaturalPool,
    ctx: &LossCtx,
) -> CoreResult<SearchResult> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(CoreError::InvalidConfig("empty training set".into()));
    }
    if pool.is_empty() {
        return Err(CoreError::EmptyPool);
    }
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let (train_idx, val_idx) = split_half_by_hash(&ids);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(CoreError::InvalidConfig(
            "need at least two pairs to form train and validation splits".into(),
        ));
    }
    let mut state = SearchState::new(*cfg)?;
    for epoch in 0..cfg.search_epochs {
        state.epoch = epoch;
        let mut tr = rng::stream(cfg.seed, "search-train-shuffle", &[epoch as u64]);
        let mut vr = rng::stream(cfg.seed, "search-val-shuffle", &[epoch as u64]);
        let train_batches = epoch_batches(train_idx.len(), cfg.batch_size, &mut tr);
        let val_batches = epoch_batches(val_idx.len(), cfg.batch_size, &mut vr);
        for (bi, tb) in train_batches.iter().enumerate() {
            let vb = &val_batches[bi % val_batches.len()];
            let crop_batch = |src: &[usize], sel: &[usize], tag: &str| -> CoreResult<Vec<ExposurePair>> {
                sel.iter()
                    .enumerate()
                    .map(|(slot, &i)| {
                        let mut cr = rng::stream(
                            cfg.seed,
                            tag,
                            &[epoch as u64, bi as u64, slot as u64],
                        );
                        random_crop_pair(&pairs[src[i]], cfg.crop, &mut cr)
                    })
                    .collect()
            };
            let train_batch = crop_batch(&train_idx, tb, "search-crop-train")?;
            let val_batch = crop_batch(&val_idx, vb, "search-crop-val")?;
            let mut nr = rng::stream(cfg.seed, "search-natural", &[state.step]);
            let natural = sample_natural(pool, cfg.crop, cfg.crop, &mut nr)?;

            let l_train = step_omega(&mut state, &train_batch, ctx)?;
            let gamma_h = step_beta(&mut state, &val_batch, &natural, ctx)?;
            let l_val = step_alpha(&mut state, &val_batch, ctx)?;
            state.history.push(HistoryRecord {
                step: state.step,
                epoch,
                l_train,
                l_val,
                gamma_h,
            });
            state.step += 1;
        }
        prune_epoch(&mut state);
    }
    let finalized = wsras::retention_finalize(&state.model.mixed_edges(), &cfg.wsras);
    let retained = finalized
        .iter()
        .map(|f| (f.name.clone(), f.retained.clone()))
        .collect();
    Ok(SearchResult {
        arch_snapshots: state.model.edge_snapshots(),
        retained,
        loss: state.loss.clone(),
        history: state.history.clone(),
        prune_log: state.prune_log.clone(),
    })
}

/// Receives one checkpoint per epoch during training.
pub trait CheckpointSink {
    fn save(&mut self, epoch: usize, model: &FusionModel, adam: &Adam) -> CoreResult<()>;
}

/// Discards checkpoints.
pub struct NoopSink;

impl CheckpointSink for NoopSink {
    fn save(&mut self, _: usize, _: &FusionModel, _: &Adam) -> CoreResult<()> {
        Ok(())
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: FusionModel,
    pub epoch_losses: Vec<f64>,
}

/// Train a finalized architecture from scratch under frozen loss weights.
pub fn run_train(
    cfg: &TrainConfig,
    net: NetConfig,
    retained: &[(String, Vec<(OpKind, f64)>)],
    loss_params: &LossParams,
    pairs: &[ExposurePair],
    ctx: &LossCtx,
    sink: &mut dyn CheckpointSink,
) -> CoreResult<TrainResult> {
    let model = FusionModel::new_finalized(net, retained, rng::derive_seed(cfg.seed, "train-model", &[]))?;
    let adam = Adam::new(cfg.lr);
    resume_train(cfg, model, adam, 0, loss_params, pairs, ctx, sink)
}

/// Continue training from a checkpointed model and optimizer at
/// `start_epoch`. With `start_epoch == cfg.epochs` this is a no-op and the
/// model is returned unchanged.
#[allow(clippy::too_many_arguments)]
pub fn resume_train(
    cfg: &TrainConfig,
    mut model: FusionModel,
    mut adam: Adam,
    start_epoch: usize,
    loss_params: &LossParams,
    pairs: &[ExposurePair],
    ctx: &LossCtx,
    sink: &mut dyn CheckpointSink,
) -> CoreResult<TrainResult> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidConfig("empty training set".into()));
    }
    let mut epoch_losses = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let mut sh = rng::stream(cfg.seed, "train-shuffle", &[epoch as u64]);
        let batches = epoch_batches(pairs.len(), cfg.batch_size, &mut sh);
        let mut epoch_loss = 0.0;
        let mut count = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let inv = 1.0 / batch.len() as f64;
            let mut grads = ModelGrads::default();
            let mut batch_loss = 0.0;
            for (slot, &i) in batch.iter().enumerate() {
                let mut cr = rng::stream(cfg.seed, "train-crop", &[epoch as u64, bi as u64, slot as u64]);
                let pair = random_crop_pair(&pairs[i], cfg.crop, &mut cr)?;
                let cache = model.forward_cached(&pair.under, &pair.over)?;
                let (value, dout) = loss::combine_with_grad(loss_params, &pair, cache.output(), ctx)?;
                batch_loss += ensure_finite(value, "training loss")? * inv;
                let g = model.backward(&cache, &dout);
                grads.add_scaled(&g, inv);
            }
            apply_omega(&mut model, &mut adam, &grads);
            epoch_loss += batch_loss;
            count += 1;
        }
        epoch_losses.push(epoch_loss / count.max(1) as f64);
        sink.save(epoch, &model, &adam)?;
    }
    Ok(TrainResult {
        model,
        epoch_losses,
    })
}
