//! Weighted structure refinement: pruning weak candidates during the search
//! and retaining the top-P weighted candidates at the end.
//!
//! Pruning removes at most one candidate per edge per call (the minimum-
//! weight one, when it falls below the threshold) and never shrinks an edge
//! below P candidates. Retention re-softmaxes the surviving logits of the
//! P strongest candidates into frozen mixture weights.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath::softmax;
use crate::ops::{FinalizedEdge, MixedEdge, OpKind};

/// Threshold rule checked per edge at each prune opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRule {
    /// Half the uniform weight of the currently active candidates.
    HalfUniform,
    /// A fixed absolute threshold in `(0, 1)`.
    Fixed(f64),
}

impl ThetaRule {
    pub fn theta(&self, active: usize) -> f64 {
        match self {
            ThetaRule::HalfUniform => 0.5 / active as f64,
            ThetaRule::Fixed(t) => *t,
        }
    }
}

impl Default for ThetaRule {
    fn default() -> Self {
        ThetaRule::HalfUniform
    }
}

/// Refinement configuration: the threshold rule and the retention count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsrasConfig {
    pub theta: ThetaRule,
    pub retain_p: usize,
}

impl Default for WsrasConfig {
    fn default() -> Self {
        WsrasConfig {
            theta: ThetaRule::HalfUniform,
            retain_p: 2,
        }
    }
}

/// One pruning decision, recorded for the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub step: u64,
    pub edge_index: usize,
    pub edge_name: String,
    pub pruned_kind: OpKind,
    pub weight_at_prune: f64,
    pub theta: f64,
}

/// Index of the minimum; exact ties resolve to the lowest index.
pub fn tie_break(weights: &[f64]) -> usize {
    assert!(!weights.is_empty());
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate().skip(1) {
        if w < weights[best] {
            best = i;
        }
    }
    best
}

/// One pruning pass over the given edges. At most one candidate per edge is
/// deactivated; edges already at `retain_p` are never touched.
pub fn prune_step(
    edges: &mut [&mut MixedEdge],
    cfg: &WsrasConfig,
    step: u64,
) -> Vec<PruneEvent> {
    let mut events = Vec::new();
    for (edge_index, edge) in edges.iter_mut().enumerate() {
        let active = edge.active_count();
        if active <= cfg.retain_p {
            continue;
        }
        let weights = edge.arch_weights();
        let theta = cfg.theta.theta(active);
        let j = tie_break(&weights);
        if weights[j] < theta {
            let original = edge.active_indices()[j];
            let kind = edge.ops[original].kind;
            edge.deactivate(original);
            events.push(PruneEvent {
                step,
                edge_index,
                edge_name: edge.name.clone(),
                pruned_kind: kind,
                weight_at_prune: weights[j],
                theta,
            });
        }
    }
    events
}

/// Freeze the top-P candidates of one edge into a finalized edge.
///
/// Retained candidates are ordered by descending weight (ties to the lower
/// candidate index); their logits are re-softmaxed into the fixed weights.
pub fn finalize_edge(edge: &MixedEdge, retain_p: usize) -> FinalizedEdge {
    assert!(retain_p >= 1);
    let weights = edge.arch_weights();
    let live = edge.active_indices();
    let mut order: Vec<usize> = (0..live.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .expect("finite weights")
            .then(live[a].cmp(&live[b]))
    });
    order.truncate(retain_p.min(live.len()));
    let kept_alpha: Vec<f64> = order.iter().map(|&j| edge.alpha[j]).collect();
    let fixed = softmax(&kept_alpha);
    let retained: Vec<(OpKind, f64)> = order
        .iter()
        .zip(fixed.iter())
        .map(|(&j, &w)| (edge.ops[live[j]].kind, w))
        .collect();
    let ops = order.iter().map(|&j| edge.ops[live[j]].clone()).collect();
    FinalizedEdge {
        name: edge.name.clone(),
        retained,
        ops,
        source_alpha: kept_alpha,
    }
}

/// Finalize every edge with the configured retention count.
pub fn retention_finalize(edges: &[&MixedEdge], cfg: &WsrasConfig) -> Vec<FinalizedEdge> {
    edges
        .iter()
        .map(|e| finalize_edge(e, cfg.retain_p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use crate::ops::{build_candidate_set, CandidateOp};
    use crate::rng;
    use crate::tensor::Tensor;
    use alloc::vec;

    /// Logits whose softmax equals the given weights.
    fn logits_for(weights: &[f64]) -> Vec<f64> {
        weights.iter().map(|&w| fmath::ln(w)).collect()
    }

    fn edge_with_weights(weights: &[f64]) -> MixedEdge {
        let mut r = rng::stream(1, "wsras-ops", &[weights.len() as u64]);
        let ops = build_candidate_set(2, &mut r).unwrap();
        let mut edge = MixedEdge::new("e", ops.into_iter().take(weights.len()).collect());
        edge.alpha = logits_for(weights);
        edge
    }

    #[test]
    fn prunes_exactly_the_minimum_below_theta() {
        let mut edge = edge_with_weights(&[0.4, 0.35, 0.15, 0.10]);
        let cfg = WsrasConfig {
            theta: ThetaRule::Fixed(0.12),
            retain_p: 2,
        };
        let events = prune_step(&mut [&mut edge], &cfg, 3);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].pruned_kind, edge.ops[3].kind);
        assert!((events[0].weight_at_prune - 0.10).abs() < 1e-9);
        assert_eq!(events[0].theta, 0.12);
        assert_eq!(events[0].step, 3);
        assert_eq!(edge.active_count(), 3);
        // Survivors renormalize.
        let w: f64 = edge.arch_weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn never_prunes_at_the_retention_floor() {
        let mut edge = edge_with_weights(&[0.5, 0.5]);
        let cfg = WsrasConfig {
            theta: ThetaRule::Fixed(0.99),
            retain_p: 2,
        };
        let events = prune_step(&mut [&mut edge], &cfg, 0);
        assert!(events.is_empty());
        assert_eq!(edge.active_count(), 2);
    }

    #[test]
    fn no_prune_when_minimum_meets_theta() {
        let mut edge = edge_with_weights(&[0.34, 0.33, 0.33]);
        let cfg = WsrasConfig {
            theta: ThetaRule::Fixed(0.1),
            retain_p: 2,
        };
        assert!(prune_step(&mut [&mut edge], &cfg, 0).is_empty());
        assert_eq!(edge.active_count(), 3);
    }

    #[test]
    fn tie_break_prefers_lowest_index() {
        assert_eq!(tie_break(&[0.2, 0.2, 0.6]), 0);
        assert_eq!(tie_break(&[0.6, 0.2, 0.2]), 1);
        assert_eq!(tie_break(&[0.1]), 0);
    }

    #[test]
    fn retention_renormalizes_top_two() {
        let edge = edge_with_weights(&[0.5, 0.3, 0.2]);
        let fin = finalize_edge(&edge, 2);
        assert_eq!(fin.retained.len(), 2);
        assert!((fin.retained[0].1 - 0.625).abs() < 1e-9);
        assert!((fin.retained[1].1 - 0.375).abs() < 1e-9);
        assert_eq!(fin.retained[0].0, edge.ops[0].kind);
        assert_eq!(fin.retained[1].0, edge.ops[1].kind);
    }

    #[test]
    fn retention_with_p_one_degenerates_to_argmax() {
        let edge = edge_with_weights(&[0.2, 0.7, 0.1]);
        let fin = finalize_edge(&edge, 1);
        assert_eq!(fin.retained.len(), 1);
        assert_eq!(fin.retained[0].0, edge.ops[1].kind);
        assert_eq!(fin.retained[0].1, 1.0);
    }

    #[test]
    fn retention_with_large_p_keeps_all_weights_unchanged() {
        let edge = edge_with_weights(&[0.5, 0.3, 0.2]);
        let fin = finalize_edge(&edge, 7);
        assert_eq!(fin.retained.len(), 3);
        let expect = edge.arch_weights();
        for ((_, w), e) in fin.retained.iter().zip(expect.iter()) {
            assert!((w - e).abs() < 1e-12);
        }
    }

    #[test]
    fn shrinkage_is_monotone_and_irreversible() {
        let mut edge = edge_with_weights(&[0.3, 0.25, 0.2, 0.15, 0.1]);
        let cfg = WsrasConfig {
            theta: ThetaRule::Fixed(0.9),
            retain_p: 2,
        };
        let mut pruned_kinds: Vec<OpKind> = Vec::new();
        let mut last = edge.active_count();
        for step in 0..8 {
            let events = prune_step(&mut [&mut edge], &cfg, step);
            let now = edge.active_count();
            assert!(now <= last);
            assert!(now >= cfg.retain_p);
            last = now;
            for e in &events {
                assert!(e.weight_at_prune < e.theta);
                pruned_kinds.push(e.pruned_kind);
            }
            // A pruned kind never reappears in the active set.
            for k in &pruned_kinds {
                let idx = edge.ops.iter().position(|o| o.kind == *k).unwrap();
                assert!(!edge.active[idx]);
            }
        }
        assert_eq!(edge.active_count(), 2);
    }

    #[test]
    fn retention_equals_bruteforce_argmax_p() {
        // Exhaustive oracle: the best P-subset by total weight, ties to the
        // lexicographically smallest index set.
        let weights = [0.18, 0.22, 0.05, 0.22, 0.13, 0.2];
        let edge = edge_with_weights(&weights);
        for p in 1..=6usize {
            let fin = finalize_edge(&edge, p);
            let live = edge.active_indices();
            let w = edge.arch_weights();
            let mut best: Option<(f64, Vec<usize>)> = None;
            let n = live.len();
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != p {
                    continue;
                }
                let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                let total: f64 = subset.iter().map(|&i| w[i]).sum();
                let better = match &best {
                    None => true,
                    Some((bt, bs)) => total > *bt + 1e-12 || (total > *bt - 1e-12 && subset < *bs),
                };
                if better {
                    best = Some((total, subset));
                }
            }
            let (_, oracle) = best.unwrap();
            let mut got: Vec<usize> = fin
                .retained
                .iter()
                .map(|(k, _)| {
                    live.iter()
                        .position(|&i| edge.ops[i].kind == *k)
                        .unwrap()
                })
                .collect();
            got.sort_unstable();
            assert_eq!(got, oracle, "p={p}");
        }
    }

    #[test]
    fn finalized_forward_equals_restricted_renormalized_supernet() {
        // Constant stubs make the mixture arithmetic exact: supernet output
        // restricted to the retained ops with renormalized weights must
        // equal the finalized forward.
        let consts = [0.1, 0.4, 0.7, 1.0];
        let mut ops = Vec::new();
        for (i, &v) in consts.iter().enumerate() {
            let mut op = CandidateOp::new(OpKind::ALL[i], 1);
            for b in &mut op.conv.bias {
                *b = v;
            }
            ops.push(op);
        }
        let mut edge = MixedEdge::new("e", ops);
        edge.alpha = logits_for(&[0.4, 0.1, 0.3, 0.2]);
        let fin = finalize_edge(&edge, 2);
        let x = Tensor::filled(1, 5, 5, 0.5);
        let (got, _) = fin.forward(&x);
        // Retained: weights 0.4 (const 0.1) and 0.3 (const 0.7), renormalized
        // to 4/7 and 3/7.
        let expect = (4.0 / 7.0) * 0.1 + (3.0 / 7.0) * 0.7;
        for &v in got.data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }
}
