//! The three-term training objective: cross-entropy classification on the
//! aggregated logits, geometry-aware clustering of evidence embeddings
//! toward their soft-assigned fake-mode prototypes (with an entropy term),
//! and a repulsion loss that keeps prototypes separated.

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::head::PrototypeHead;
use crate::model::Model;
use crate::tape::{NodeId, ParamStore, Tape};

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    /// +1 applies the entropy term exactly as written (γ·Σ q ln q, a
    /// negative quantity favoring uniform assignments); −1 flips it.
    pub entropy_sign: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(cfg: &TrainConfig) -> Self {
        LossWeights {
            lambda: cfg.lambda_cluster,
            beta: cfg.beta_sep,
            gamma: cfg.gamma_entropy,
            entropy_sign: cfg.entropy_sign,
        }
    }
}

/// Classification loss −log softmax([S₋, S₊]) at the true-label slot.
pub fn classification_loss(tape: &mut Tape, s_neg: NodeId, s_pos: NodeId, fake: bool) -> NodeId {
    tape.bce_from_logits(s_neg, s_pos, fake)
}

/// Per-utterance clustering loss over the M×K responsibility and distance
/// matrices: (1/M)·Σ q⊙d + sign·(γ/M)·Σ q ln q.
pub fn cluster_loss(
    tape: &mut Tape,
    q: NodeId,
    d_pos: NodeId,
    gamma: f64,
    entropy_sign: f64,
) -> NodeId {
    let (m, _) = tape.shape(q);
    let weighted = tape.mul(q, d_pos);
    let pull = tape.sum_all(weighted);
    let pull = tape.scale(pull, 1.0 / m as f64);
    let entropy = tape.q_log_q(q);
    tape.add_scaled(pull, entropy, entropy_sign * gamma / m as f64)
}

/// Prototype repulsion Σ_{i<j} exp(−d(p₊ᵢ, p₊ⱼ)) + Σ_k exp(−d(p₊ₖ, p₋)),
/// over realized prototype nodes (the pair sum is empty when K = 1).
pub fn separation_loss(
    tape: &mut Tape,
    p_pos: NodeId,
    p_neg: NodeId,
    hyperbolic: bool,
    curvature: f64,
) -> NodeId {
    let (k, _) = tape.shape(p_pos);
    let pd = if hyperbolic {
        tape.pair_geo_dist(p_pos, p_pos, curvature)
    } else {
        tape.pair_euc_dist(p_pos, p_pos)
    };
    let neg_pd = tape.scale(pd, -1.0);
    let exp_pd = tape.exp(neg_pd);
    let mut mask = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            mask[i * k + j] = 1.0;
        }
    }
    let mask = tape.input(k, k, &mask);
    let upper = tape.mul(exp_pd, mask);
    let pair_term = tape.sum_all(upper);

    let dn = if hyperbolic {
        tape.pair_geo_dist(p_pos, p_neg, curvature)
    } else {
        tape.pair_euc_dist(p_pos, p_neg)
    };
    let neg_dn = tape.scale(dn, -1.0);
    let exp_dn = tape.exp(neg_dn);
    let neg_term = tape.sum_all(exp_dn);

    tape.add(pair_term, neg_term)
}

/// Binds the head's prototype parameters on a fresh tape, realizes the
/// prototypes, and returns the repulsion loss node. Evaluated once per
/// batch since it depends on prototypes only.
pub fn separation_loss_standalone(
    tape: &mut Tape,
    store: &ParamStore,
    head: &PrototypeHead,
) -> NodeId {
    let neg = tape.param(store, head.neg);
    let pos = tape.param(store, head.pos);
    let (p_neg, p_pos) = if head.hyperbolic {
        (tape.row_exp_map(neg, head.curvature), tape.row_exp_map(pos, head.curvature))
    } else {
        (neg, pos)
    };
    separation_loss(tape, p_pos, p_neg, head.hyperbolic, head.curvature)
}

/// One utterance inside a training batch.
pub struct BatchItem<'a> {
    pub feats: &'a [f64],
    pub t: usize,
    pub fake: bool,
}

/// Component values of one batch-loss evaluation. `total` is
/// cls + λ·cluster + β·sep; `cluster` is the unweighted mean over the
/// batch's fake items (zero when the batch has none or the head has no
/// prototypes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub cls: f64,
    pub cluster: f64,
    pub sep: f64,
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("{what} is not finite ({v})")))
    }
}

/// Evaluates the batch loss; with `accumulate_grads` it also runs backward
/// on every per-utterance tape (and the prototype-only repulsion tape) and
/// adds the gradients into the model's buffers.
///
/// The cluster term runs only over fake-labelled items and is averaged over
/// their count, so an all-real batch reduces to L_cls + β·L_sep.
pub fn batch_loss(
    model: &mut Model,
    batch: &[BatchItem],
    weights: &LossWeights,
    accumulate_grads: bool,
) -> Result<BatchLoss> {
    assert!(!batch.is_empty(), "empty batch");
    let b = batch.len() as f64;
    let fakes = batch.iter().filter(|i| i.fake).count() as f64;
    let use_cluster = model.prototype_head().is_some() && fakes > 0.0 && weights.lambda != 0.0;

    let mut cls_sum = 0.0;
    let mut cluster_sum = 0.0;
    for item in batch {
        let mut tape = Tape::new();
        let cluster_weight = if use_cluster && item.fake { weights.lambda / fakes } else { 0.0 };
        let (total, fwd) = model.utterance_loss(
            &mut tape,
            item.feats,
            item.t,
            item.fake,
            weights,
            1.0 / b,
            cluster_weight,
        );
        let sn = tape.scalar(fwd.s_neg);
        let sp = tape.scalar(fwd.s_pos);
        let z = if item.fake { sn - sp } else { sp - sn };
        cls_sum += check_finite(z.max(0.0) + (-z.abs()).exp().ln_1p(), "classification loss")?;

        if use_cluster && item.fake {
            if let Some(nodes) = &fwd.proto {
                let (m, _) = tape.shape(nodes.q);
                let q = tape.value(nodes.q);
                let d = tape.value(nodes.d_pos);
                let pull: f64 = q.iter().zip(d).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                let ent: f64 =
                    q.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>();
                cluster_sum += check_finite(
                    pull + weights.entropy_sign * weights.gamma / m as f64 * ent,
                    "cluster loss",
                )?;
            }
        }
        if accumulate_grads {
            tape.backward(total, 1.0);
            tape.export_grads(&mut model.store);
        }
    }

    let mut sep = 0.0;
    if let Some(head) = model.prototype_head() {
        let head = head.clone();
        let mut tape = Tape::new();
        let node = separation_loss_standalone(&mut tape, &model.store, &head);
        sep = check_finite(tape.scalar(node), "separation loss")?;
        if accumulate_grads && weights.beta != 0.0 {
            tape.backward(node, weights.beta);
            tape.export_grads(&mut model.store);
        }
    }

    let cls = cls_sum / b;
    let cluster = if use_cluster { cluster_sum / fakes } else { 0.0 };
    let total = check_finite(cls + weights.lambda * cluster + weights.beta * sep, "total loss")?;
    Ok(BatchLoss { total, cls, cluster, sep })
}
