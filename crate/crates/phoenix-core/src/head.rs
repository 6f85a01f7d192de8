//! Prototype scoring head: projects evidence into the ball, computes
//! responsibilities over the K positive prototypes, evidence-level scores,
//! and the aggregated instance logits. A flat-metric variant swaps the
//! geodesic distance for the Euclidean one and keeps prototypes in ℝʰ;
//! the mean-pool variant replaces the whole evidence/prototype path with
//! a two-layer classifier over the time-averaged backbone output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::uniform_init;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};

/// Prototype tangent vectors start near the origin where the ball is
/// locally Euclidean and gradients are well-scaled.
const PROTO_INIT_STD: f64 = 0.01;

fn normal_init(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("valid normal");
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub struct PrototypeHead {
    /// Projection into the embedding space, h×d.
    pub proj_w: ParamId,
    /// Real-class prototype, 1×h (tangent vector when hyperbolic).
    pub neg: ParamId,
    /// K fake-mode prototypes, K×h (tangent vectors when hyperbolic).
    pub pos: ParamId,
    /// Geodesic metric with tangent-parameterized prototypes when true;
    /// plain Euclidean otherwise.
    pub hyperbolic: bool,
    pub curvature: f64,
    pub tau: f64,
}

/// Tape nodes produced by the prototype head for one utterance.
pub struct PrototypeNodes {
    /// Realized evidence embeddings, M×h.
    pub points: NodeId,
    /// Realized prototypes (1×h and K×h).
    pub p_neg: NodeId,
    pub p_pos: NodeId,
    /// Distances to the positive prototypes, M×K, and to p₋, M×1.
    pub d_pos: NodeId,
    pub d_neg: NodeId,
    /// Soft responsibilities, M×K rows summing to one.
    pub q: NodeId,
    /// Per-evidence scores, M×1 each.
    pub s_pos_row: NodeId,
    pub s_neg_row: NodeId,
    /// Aggregated instance logits S₊, S₋ (scalars).
    pub s_pos: NodeId,
    pub s_neg: NodeId,
}

impl PrototypeHead {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        model_dim: usize,
        ball_dim: usize,
        modes: usize,
        hyperbolic: bool,
        curvature: f64,
        tau: f64,
    ) -> Self {
        // 1/fan_in projection scale keeps the initial embeddings near the
        // origin instead of the ball boundary.
        let scale = 1.0 / model_dim as f64;
        let w: Vec<f64> = (0..ball_dim * model_dim)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        PrototypeHead {
            proj_w: store.add("head.proj_w", ball_dim, model_dim, w),
            neg: store.add("head.proto_neg", 1, ball_dim, normal_init(rng, ball_dim, PROTO_INIT_STD)),
            pos: store.add(
                "head.proto_pos",
                modes,
                ball_dim,
                normal_init(rng, modes * ball_dim, PROTO_INIT_STD),
            ),
            hyperbolic,
            curvature,
            tau,
        }
    }

    /// Full head pass over an M×d evidence node.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, evidence: NodeId) -> PrototypeNodes {
        let w = tape.param(store, self.proj_w);
        let neg = tape.param(store, self.neg);
        let pos = tape.param(store, self.pos);

        let v = tape.matmul(evidence, w, false, true); // M×h
        let (points, p_neg, p_pos) = if self.hyperbolic {
            (
                tape.row_exp_map(v, self.curvature),
                tape.row_exp_map(neg, self.curvature),
                tape.row_exp_map(pos, self.curvature),
            )
        } else {
            (v, neg, pos)
        };

        let (d_pos, d_neg) = if self.hyperbolic {
            (
                tape.pair_geo_dist(points, p_pos, self.curvature),
                tape.pair_geo_dist(points, p_neg, self.curvature),
            )
        } else {
            (tape.pair_euc_dist(points, p_pos), tape.pair_euc_dist(points, p_neg))
        };

        let scores = scores_from_distances(tape, d_pos, d_neg, self.tau);
        let s_pos = tape.mean_all(scores.s_pos_row);
        let s_neg = tape.mean_all(scores.s_neg_row);
        PrototypeNodes {
            points,
            p_neg,
            p_pos,
            d_pos,
            d_neg,
            q: scores.q,
            s_pos_row: scores.s_pos_row,
            s_neg_row: scores.s_neg_row,
            s_pos,
            s_neg,
        }
    }
}

pub struct DistanceScores {
    pub q: NodeId,
    pub s_pos_row: NodeId,
    pub s_neg_row: NodeId,
}

/// Responsibilities and evidence-level scores from distance matrices:
/// q = softmax_k(−d₊/τ), s₊ = lse_k(−d₊/τ), s₋ = −d₋.
pub fn scores_from_distances(tape: &mut Tape, d_pos: NodeId, d_neg: NodeId, tau: f64) -> DistanceScores {
    let scaled = tape.scale(d_pos, -1.0 / tau);
    let q = tape.row_softmax(scaled);
    let s_pos_row = tape.row_lse(scaled);
    let s_neg_row = tape.scale(d_neg, -1.0);
    DistanceScores { q, s_pos_row, s_neg_row }
}

/// P(fake) from the aggregated logit pair: softmax([S₋, S₊]) at the + slot.
pub fn p_fake_from_logits(s_neg: f64, s_pos: f64) -> f64 {
    1.0 / (1.0 + (s_neg - s_pos).exp())
}

#[derive(Debug, Clone)]
pub struct MeanPoolHead {
    pub w1: ParamId, // d×d
    pub b1: ParamId, // 1×d
    pub w2: ParamId, // 2×d
    pub b2: ParamId, // 1×2
}

pub struct MeanPoolNodes {
    pub s_pos: NodeId,
    pub s_neg: NodeId,
}

impl MeanPoolHead {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, model_dim: usize) -> Self {
        MeanPoolHead {
            w1: store.add("head.mp_w1", model_dim, model_dim, uniform_init(rng, model_dim * model_dim, model_dim)),
            b1: store.add("head.mp_b1", 1, model_dim, vec![0.0; model_dim]),
            w2: store.add("head.mp_w2", 2, model_dim, uniform_init(rng, 2 * model_dim, model_dim)),
            b2: store.add("head.mp_b2", 1, 2, vec![0.0; 2]),
        }
    }

    /// Mean over time, then affine → tanh → affine to the logit pair.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: NodeId) -> MeanPoolNodes {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);

        let zbar = tape.col_mean(z); // 1×d
        let h = tape.matmul(zbar, w1, false, true);
        let h = tape.add_row(h, b1);
        let h = tape.tanh(h);
        let logits = tape.matmul(h, w2, false, true);
        let logits = tape.add_row(logits, b2); // 1×2
        let s_neg = tape.pick(logits, 0);
        let s_pos = tape.pick(logits, 1);
        MeanPoolNodes { s_pos, s_neg }
    }
}
