//! Attention pooling of the backbone output into M evidence vectors.
//!
//! Each evidence slot owns a learnable query; the pooling weights are a
//! softmax over time of scaled dot-product scores, so every weight row is
//! nonnegative and sums to one, and each evidence vector is a convex
//! combination of the frames.

use rand_chacha::ChaCha8Rng;

use crate::backbone::uniform_init;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};

#[derive(Debug, Clone)]
pub struct EvidenceParams {
    pub queries: ParamId, // M×d
}

/// Tape nodes produced by pooling.
pub struct Pooled {
    /// M×d evidence matrix.
    pub evidence: NodeId,
    /// M×T attention weights (row-stochastic).
    pub weights: NodeId,
}

impl EvidenceParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, m: usize, d: usize) -> Self {
        EvidenceParams { queries: store.add("evidence.queries", m, d, uniform_init(rng, m * d, d)) }
    }

    /// a_{m,·} = softmax_t((q_m · z_t)/√d);  e_m = Σ_t a_{m,t} z_t.
    pub fn pool(&self, tape: &mut Tape, store: &ParamStore, z: NodeId) -> Pooled {
        let (_, d) = tape.shape(z);
        let q = tape.param(store, self.queries);
        let scores = tape.matmul(q, z, false, true); // M×T
        let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = tape.row_softmax(scaled);
        let evidence = tape.matmul(weights, z, false, false); // M×d
        Pooled { evidence, weights }
    }
}
