//! Token-wise adapter and the selective state-space backbone.
//!
//! The adapter maps each frame x_t ∈ ℝᴰ to u_t = W_φ x_t + b_φ ∈ ℝᵈ. The
//! backbone is a stack of diagonal selective state-space layers with
//! input-dependent step size, input and output projections:
//!
//!   Δ_t = softplus(W_Δ u_t + b_Δ)
//!   ā_t = exp(Δ_t ⊙ a),   a = −exp(a_log)
//!   s_t = ā_t ⊙ s_{t−1} + Δ_t ⊙ (W_B u_t) ⊙ u_t
//!   y_t = (W_C u_t) ⊙ s_t + skip ⊙ u_t
//!
//! followed by a residual connection and layer norm. The recurrence is
//! causal: z_t depends only on u_{1..t}.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{NodeId, ParamId, ParamStore, Tape};

/// Uniform init on ±1/√fan_in.
pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
}

#[derive(Debug, Clone)]
pub struct AdapterParams {
    pub w: ParamId, // d×D
    pub b: ParamId, // 1×d
}

impl AdapterParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, feat_dim: usize, model_dim: usize) -> Self {
        let w = store.add("adapter.w", model_dim, feat_dim, uniform_init(rng, model_dim * feat_dim, feat_dim));
        let b = store.add("adapter.b", 1, model_dim, vec![0.0; model_dim]);
        AdapterParams { w, b }
    }

    /// U = X W_φᵀ + b_φ, applied identically per frame.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let u = tape.matmul(x, w, false, true);
        tape.add_row(u, b)
    }
}

#[derive(Debug, Clone)]
pub struct SsmLayerParams {
    pub a_log: ParamId,   // 1×d, decay magnitude stored as log
    pub w_delta: ParamId, // d×d
    pub b_delta: ParamId, // 1×d
    pub w_b: ParamId,     // d×d
    pub w_c: ParamId,     // d×d
    pub skip: ParamId,    // 1×d
    pub ln_scale: ParamId,
    pub ln_shift: ParamId,
}

impl SsmLayerParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, index: usize, d: usize) -> Self {
        let name = |field: &str| format!("ssm{index}.{field}");
        // ā = exp(softplus(0)·a) ≈ 0.9 at init.
        let a0 = (-(0.9f64.ln()) / std::f64::consts::LN_2).ln();
        SsmLayerParams {
            a_log: store.add(&name("a_log"), 1, d, vec![a0; d]),
            w_delta: store.add(&name("w_delta"), d, d, uniform_init(rng, d * d, d)),
            b_delta: store.add(&name("b_delta"), 1, d, vec![0.0; d]),
            w_b: store.add(&name("w_b"), d, d, uniform_init(rng, d * d, d)),
            w_c: store.add(&name("w_c"), d, d, uniform_init(rng, d * d, d)),
            skip: store.add(&name("skip"), 1, d, vec![1.0; d]),
            ln_scale: store.add(&name("ln_scale"), 1, d, vec![1.0; d]),
            ln_shift: store.add(&name("ln_shift"), 1, d, vec![0.0; d]),
        }
    }

    /// One selective-scan layer with residual connection and layer norm.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, u: NodeId) -> NodeId {
        let a_log = tape.param(store, self.a_log);
        let w_delta = tape.param(store, self.w_delta);
        let b_delta = tape.param(store, self.b_delta);
        let w_b = tape.param(store, self.w_b);
        let w_c = tape.param(store, self.w_c);
        let skip = tape.param(store, self.skip);
        let ln_scale = tape.param(store, self.ln_scale);
        let ln_shift = tape.param(store, self.ln_shift);

        let pre_delta = tape.matmul(u, w_delta, false, true);
        let pre_delta = tape.add_row(pre_delta, b_delta);
        let delta = tape.softplus(pre_delta); // T×d, positive

        let a_mag = tape.exp(a_log);
        let a = tape.scale(a_mag, -1.0); // strictly negative decay
        let gate_arg = tape.mul_row(delta, a);
        let gate = tape.exp(gate_arg); // ā ∈ (0,1)

        let bu = tape.matmul(u, w_b, false, true);
        let b_gated = tape.mul(delta, bu);
        let state_in = tape.mul(b_gated, u);
        let state = tape.scan(gate, state_in);

        let cu = tape.matmul(u, w_c, false, true);
        let out = tape.mul(cu, state);
        let skip_term = tape.mul_row(u, skip);
        let y = tape.add(out, skip_term);

        let res = tape.add(u, y);
        tape.layer_norm(res, ln_scale, ln_shift)
    }
}

/// Full backbone: adapter followed by the layer stack.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub adapter: AdapterParams,
    pub layers: Vec<SsmLayerParams>,
}

impl Backbone {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        feat_dim: usize,
        model_dim: usize,
        layers: usize,
    ) -> Self {
        let adapter = AdapterParams::init(store, rng, feat_dim, model_dim);
        let layers = (0..layers)
            .map(|i| SsmLayerParams::init(store, rng, i, model_dim))
            .collect();
        Backbone { adapter, layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let mut h = self.adapter.forward(tape, store, x);
        for layer in &self.layers {
            h = layer.forward(tape, store, h);
        }
        h
    }
}
