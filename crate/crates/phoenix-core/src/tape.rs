//! Reverse-mode gradient accumulation over a recorded computation tape.
//!
//! The model's forward pass is composed from a fixed set of primitives
//! (matrix multiply, row broadcasts, softmax, log-sum-exp, the selective
//! state-space scan, layer norm, manifold kernels). Each primitive records
//! itself on the [`Tape`] together with its cached forward output;
//! [`Tape::backward`] walks the records in exact reverse order and
//! accumulates adjoints. Parameters enter as bound leaves and their
//! gradients are exported into [`ParamStore`] afterwards.
//!
//! Forward evaluation is eager and deterministic: rebuilding a tape from
//! identical inputs reproduces identical node values bit-for-bit, and two
//! backward passes over identical tapes produce bit-identical gradients.
//! A tape is single-owner; nothing here is shared across threads.

use crate::manifold;

/// A named trainable tensor (1-D or 2-D) paired with its gradient buffer.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type ParamId = usize;

/// Flat registry of every trainable tensor in a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> ParamId {
        assert_eq!(values.len(), rows * cols, "param {name}: shape/value mismatch");
        let grad = vec![0.0; values.len()];
        self.tensors.push(ParamTensor { name: name.to_string(), rows, cols, values, grad });
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn grad_global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales every gradient so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_global_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            for t in &mut self.tensors {
                t.grad.iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }
}

pub type NodeId = usize;

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
}

enum Record {
    /// out = op(a) · op(b), transposes controlled per operand.
    MatMul { a: NodeId, b: NodeId, out: NodeId, ta: bool, tb: bool },
    Add { a: NodeId, b: NodeId, out: NodeId },
    /// out = a + k·b
    AddScaled { a: NodeId, b: NodeId, k: f64, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Scale { a: NodeId, k: f64, out: NodeId },
    /// Row vector broadcast over every row of a matrix.
    AddRow { a: NodeId, row: NodeId, out: NodeId },
    MulRow { a: NodeId, row: NodeId, out: NodeId },
    Softplus { a: NodeId, out: NodeId },
    Tanh { a: NodeId, out: NodeId },
    Exp { a: NodeId, out: NodeId },
    /// s_t = gate_t ⊙ s_{t−1} + x_t over the row dimension, s_0 = 0.
    Scan { gate: NodeId, x: NodeId, out: NodeId },
    /// Per-row normalization with learned scale and shift.
    LayerNorm { a: NodeId, scale: NodeId, shift: NodeId, out: NodeId },
    RowSoftmax { a: NodeId, out: NodeId },
    /// Per-row log-sum-exp, (r×c) → (r×1).
    RowLse { a: NodeId, out: NodeId },
    ColMean { a: NodeId, out: NodeId },
    MeanAll { a: NodeId, out: NodeId },
    SumAll { a: NodeId, out: NodeId },
    /// Σ q·ln q over all entries, with 0·ln 0 = 0.
    QLogQ { q: NodeId, out: NodeId },
    /// Per-row exponential map at the origin of the ball with curvature c.
    RowExpMap { a: NodeId, out: NodeId, c: f64 },
    /// out[i,j] = geodesic distance between row i of a and row j of b.
    PairGeoDist { a: NodeId, b: NodeId, out: NodeId, c: f64 },
    PairEucDist { a: NodeId, b: NodeId, out: NodeId },
    /// Scalar pick by flat index.
    Pick { a: NodeId, idx: usize, out: NodeId },
    /// Binary cross-entropy on the aggregated logit pair.
    BceFromLogits { s_neg: NodeId, s_pos: NodeId, fake: bool, out: NodeId },
}

/// The recorded forward pass of one loss evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
    bindings: Vec<(NodeId, ParamId)>,
}

const LN_EPS: f64 = 1e-5;

fn dgemm_dims(rows: usize, cols: usize, t: bool) -> (usize, usize) {
    if t {
        (cols, rows)
    } else {
        (rows, cols)
    }
}

/// C ← alpha·op(A)·op(B) + beta·C on row-major slices.
#[allow(clippy::too_many_arguments)]
fn dgemm(
    alpha: f64,
    a: &[f64],
    (ar, ac): (usize, usize),
    ta: bool,
    b: &[f64],
    (br, bc): (usize, usize),
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (m, k) = dgemm_dims(ar, ac, ta);
    let (kb, n) = dgemm_dims(br, bc, tb);
    assert_eq!(k, kb, "matmul inner dimension mismatch: {k} vs {kb}");
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push_node(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        assert_eq!(value.len(), rows * cols);
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { rows, cols, value, grad });
        self.nodes.len() - 1
    }

    /// A constant leaf (no gradient consumer).
    pub fn input(&mut self, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        self.push_node(rows, cols, data.to_vec())
    }

    /// A leaf bound to a trainable parameter; gradients flow back to it
    /// through [`Tape::export_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = store.get(id);
        let node = self.push_node(t.rows, t.cols, t.values.clone());
        self.bindings.push((node, id));
        node
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        assert_eq!(self.nodes[id].value.len(), 1, "node is not a scalar");
        self.nodes[id].value[0]
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, _) = dgemm_dims(ar, ac, ta);
        let (_, n) = dgemm_dims(br, bc, tb);
        let mut out = vec![0.0; m * n];
        dgemm(
            1.0,
            &self.nodes[a].value,
            (ar, ac),
            ta,
            &self.nodes[b].value,
            (br, bc),
            tb,
            0.0,
            &mut out,
        );
        let id = self.push_node(m, n, out);
        self.records.push(Record::MatMul { a, b, out: id, ta, tb });
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b));
        let v: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        let id = self.push_node(r, c, v);
        self.records.push(Record::Add { a, b, out: id });
        id
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, k: f64) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b));
        let v: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + k * y)
            .collect();
        let (r, c) = self.shape(a);
        let id = self.push_node(r, c, v);
        self.records.push(Record::AddScaled { a, b, k, out: id });
        id
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b));
        let v: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.shape(a);
        let id = self.push_node(r, c, v);
        self.records.push(Record::Mul { a, b, out: id });
        id
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[a].value.iter().map(|x| k * x).collect();
        let (r, c) = self.shape(a);
        let id = self.push_node(r, c, v);
        self.records.push(Record::Scale { a, k, out: id });
        id
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.nodes[row].value.len(), c, "row broadcast width mismatch");
        let mut v = self.nodes[a].value.clone();
        for i in 0..r {
            for j in 0..c {
                v[i * c + j] += self.nodes[row].value[j];
            }
        }
        let id = self.push_node(r, c, v);
        self.records.push(Record::AddRow { a, row, out: id });
        id
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.nodes[row].value.len(), c, "row broadcast width mismatch");
        let mut v = self.nodes[a].value.clone();
        for i in 0..r {
            for j in 0..c {
                v[i * c + j] *= self.nodes[row].value[j];
            }
        }
        let id = self.push_node(r, c, v);
        self.records.push(Record::MulRow { a, row, out: id });
        id
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a].value.iter().map(|x| softplus(*x)).collect();
        let (r, c) = self.shape(a);
        let id = self.push_node(r, c, v);
        self.records.push(Record::Softplus { a, out: id });
        id
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a].value.iter().map(|x| x.tanh()).collect();
        let (r, c) = self.shape(a);
        let id = self.push_node(r, c, v);
        self.records.push(Record::Tanh { a, out: id });
        id
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[a].value.iter().map(|x| x.exp()).collect();
        let (r, c) = self.shape(a);
        let id = self.push_node(r, c, v);
        self.records.push(Record::Exp { a, out: id });
        id
    }

    /// Sequential state recurrence over rows: s_t = gate_t ⊙ s_{t−1} + x_t.
    pub fn scan(&mut self, gate: NodeId, x: NodeId) -> NodeId {
        assert_eq!(self.shape(gate), self.shape(x));
        let (t, d) = self.shape(x);
        let mut v = vec![0.0; t * d];
        for ti in 0..t {
            for j in 0..d {
                let prev = if ti == 0 { 0.0 } else { v[(ti - 1) * d + j] };
                v[ti * d + j] =
                    self.nodes[gate].value[ti * d + j] * prev + self.nodes[x].value[ti * d + j];
            }
        }
        let id = self.push_node(t, d, v);
        self.records.push(Record::Scan { gate, x, out: id });
        id
    }

    pub fn layer_norm(&mut self, a: NodeId, scale: NodeId, shift: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.nodes[scale].value.len(), c);
        assert_eq!(self.nodes[shift].value.len(), c);
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a].value[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..c {
                v[i * c + j] = self.nodes[scale].value[j] * (row[j] - mean) * inv
                    + self.nodes[shift].value[j];
            }
        }
        let id = self.push_node(r, c, v);
        self.records.push(Record::LayerNorm { a, scale, shift, out: id });
        id
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a].value[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                v[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                v[i * c + j] /= sum;
            }
        }
        let id = self.push_node(r, c, v);
        self.records.push(Record::RowSoftmax { a, out: id });
        id
    }

    pub fn row_lse(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let mut v = vec![0.0; r];
        for i in 0..r {
            let row = &self.nodes[a].value[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            v[i] = max + sum.ln();
        }
        let id = self.push_node(r, 1, v);
        self.records.push(Record::RowLse { a, out: id });
        id
    }

    pub fn col_mean(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let mut v = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                v[j] += self.nodes[a].value[i * c + j];
            }
        }
        v.iter_mut().for_each(|x| *x /= r as f64);
        let id = self.push_node(1, c, v);
        self.records.push(Record::ColMean { a, out: id });
        id
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len();
        let v = vec![self.nodes[a].value.iter().sum::<f64>() / n as f64];
        let id = self.push_node(1, 1, v);
        self.records.push(Record::MeanAll { a, out: id });
        id
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = vec![self.nodes[a].value.iter().sum::<f64>()];
        let id = self.push_node(1, 1, v);
        self.records.push(Record::SumAll { a, out: id });
        id
    }

    pub fn q_log_q(&mut self, q: NodeId) -> NodeId {
        let v = vec![self.nodes[q]
            .value
            .iter()
            .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>()];
        let id = self.push_node(1, 1, v);
        self.records.push(Record::QLogQ { q, out: id });
        id
    }

    pub fn row_exp_map(&mut self, a: NodeId, c: f64) -> NodeId {
        let (r, cols) = self.shape(a);
        let mut v = vec![0.0; r * cols];
        for i in 0..r {
            manifold::exp_map_origin_raw(
                &self.nodes[a].value[i * cols..(i + 1) * cols],
                c,
                &mut v[i * cols..(i + 1) * cols],
            );
        }
        let id = self.push_node(r, cols, v);
        self.records.push(Record::RowExpMap { a, out: id, c });
        id
    }

    pub fn pair_geo_dist(&mut self, a: NodeId, b: NodeId, c: f64) -> NodeId {
        let (m, ha) = self.shape(a);
        let (k, hb) = self.shape(b);
        assert_eq!(ha, hb, "distance operand width mismatch");
        let mut v = vec![0.0; m * k];
        for i in 0..m {
            let x = &self.nodes[a].value[i * ha..(i + 1) * ha];
            for j in 0..k {
                let y = &self.nodes[b].value[j * ha..(j + 1) * ha];
                v[i * k + j] = manifold::geodesic_distance_raw(x, y, c);
            }
        }
        let id = self.push_node(m, k, v);
        self.records.push(Record::PairGeoDist { a, b, out: id, c });
        id
    }

    pub fn pair_euc_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ha) = self.shape(a);
        let (k, hb) = self.shape(b);
        assert_eq!(ha, hb, "distance operand width mismatch");
        let mut v = vec![0.0; m * k];
        for i in 0..m {
            let x = &self.nodes[a].value[i * ha..(i + 1) * ha];
            for j in 0..k {
                let y = &self.nodes[b].value[j * ha..(j + 1) * ha];
                v[i * k + j] = manifold::euclidean_distance_raw(x, y);
            }
        }
        let id = self.push_node(m, k, v);
        self.records.push(Record::PairEucDist { a, b, out: id });
        id
    }

    pub fn pick(&mut self, a: NodeId, idx: usize) -> NodeId {
        let v = vec![self.nodes[a].value[idx]];
        let id = self.push_node(1, 1, v);
        self.records.push(Record::Pick { a, idx, out: id });
        id
    }

    /// −log softmax([s₋, s₊]) at the labelled slot, computed stably from
    /// the logit difference.
    pub fn bce_from_logits(&mut self, s_neg: NodeId, s_pos: NodeId, fake: bool) -> NodeId {
        let sn = self.scalar(s_neg);
        let sp = self.scalar(s_pos);
        let loss = if fake { softplus(sn - sp) } else { softplus(sp - sn) };
        let id = self.push_node(1, 1, vec![loss]);
        self.records.push(Record::BceFromLogits { s_neg, s_pos, fake, out: id });
        id
    }

    /// Seeds the adjoint of `loss` and runs every recorded primitive's
    /// backward rule in reverse order.
    pub fn backward(&mut self, loss: NodeId, seed: f64) {
        assert_eq!(self.nodes[loss].value.len(), 1, "loss must be scalar");
        self.nodes[loss].grad[0] += seed;
        for ri in (0..self.records.len()).rev() {
            self.step_backward(ri);
        }
    }

    /// Adds each bound leaf's adjoint into its parameter's grad buffer.
    pub fn export_grads(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.bindings {
            let g = &self.nodes[node].grad;
            let t = store.get_mut(pid);
            debug_assert_eq!(g.len(), t.grad.len());
            for (dst, src) in t.grad.iter_mut().zip(g) {
                *dst += src;
            }
        }
    }

    fn take_grad(&self, id: NodeId) -> Vec<f64> {
        self.nodes[id].grad.clone()
    }

    fn step_backward(&mut self, ri: usize) {
        // Records own no node data, so split borrows via indices.
        match self.records[ri] {
            Record::MatMul { a, b, out, ta, tb } => {
                let g = self.take_grad(out);
                let (ar, ac) = self.shape(a);
                let (br, bc) = self.shape(b);
                let (m, _) = dgemm_dims(ar, ac, ta);
                let (_, n) = dgemm_dims(br, bc, tb);
                // dA and dB follow from C = op(A)·op(B) with G = dL/dC (m×n).
                let bv = self.nodes[b].value.clone();
                {
                    let ga = &mut self.nodes[a].grad;
                    if !ta {
                        // dA += G·op(B)ᵀ
                        dgemm(1.0, &g, (m, n), false, &bv, (br, bc), !tb, 1.0, ga);
                    } else {
                        // dA += (G·op(B)ᵀ)ᵀ = op(B)·Gᵀ
                        dgemm(1.0, &bv, (br, bc), tb, &g, (m, n), true, 1.0, ga);
                    }
                }
                let av = self.nodes[a].value.clone();
                {
                    let gb = &mut self.nodes[b].grad;
                    if !tb {
                        // dB += op(A)ᵀ·G
                        dgemm(1.0, &av, (ar, ac), !ta, &g, (m, n), false, 1.0, gb);
                    } else {
                        // dB += Gᵀ·op(A)
                        dgemm(1.0, &g, (m, n), true, &av, (ar, ac), ta, 1.0, gb);
                    }
                }
            }
            Record::Add { a, b, out } => {
                let g = self.take_grad(out);
                for (dst, src) in self.nodes[a].grad.iter_mut().zip(&g) {
                    *dst += src;
                }
                for (dst, src) in self.nodes[b].grad.iter_mut().zip(&g) {
                    *dst += src;
                }
            }
            Record::AddScaled { a, b, k, out } => {
                let g = self.take_grad(out);
                for (dst, src) in self.nodes[a].grad.iter_mut().zip(&g) {
                    *dst += src;
                }
                for (dst, src) in self.nodes[b].grad.iter_mut().zip(&g) {
                    *dst += k * src;
                }
            }
            Record::Mul { a, b, out } => {
                let g = self.take_grad(out);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                for i in 0..g.len() {
                    self.nodes[a].grad[i] += g[i] * bv[i];
                    self.nodes[b].grad[i] += g[i] * av[i];
                }
            }
            Record::Scale { a, k, out } => {
                let g = self.take_grad(out);
                for (dst, src) in self.nodes[a].grad.iter_mut().zip(&g) {
                    *dst += k * src;
                }
            }
            Record::AddRow { a, row, out } => {
                let g = self.take_grad(out);
                let (r, c) = self.shape(a);
                for (dst, src) in self.nodes[a].grad.iter_mut().zip(&g) {
                    *dst += src;
                }
                for i in 0..r {
                    for j in 0..c {
                        self.nodes[row].grad[j] += g[i * c + j];
                    }
                }
            }
            Record::MulRow { a, row, out } => {
                let g = self.take_grad(out);
                let (r, c) = self.shape(a);
                let rowv = self.nodes[row].value.clone();
                let av = self.nodes[a].value.clone();
                for i in 0..r {
                    for j in 0..c {
                        self.nodes[a].grad[i * c + j] += g[i * c + j] * rowv[j];
                        self.nodes[row].grad[j] += g[i * c + j] * av[i * c + j];
                    }
                }
            }
            Record::Softplus { a, out } => {
                let g = self.take_grad(out);
                for i in 0..g.len() {
                    let x = self.nodes[a].value[i];
                    self.nodes[a].grad[i] += g[i] * sigmoid(x);
                }
            }
            Record::Tanh { a, out } => {
                let g = self.take_grad(out);
                let ov = self.nodes[out].value.clone();
                for i in 0..g.len() {
                    self.nodes[a].grad[i] += g[i] * (1.0 - ov[i] * ov[i]);
                }
            }
            Record::Exp { a, out } => {
                let g = self.take_grad(out);
                let ov = self.nodes[out].value.clone();
                for i in 0..g.len() {
                    self.nodes[a].grad[i] += g[i] * ov[i];
                }
            }
            Record::Scan { gate, x, out } => {
                let g = self.take_grad(out);
                let (t, d) = self.shape(x);
                let sv = self.nodes[out].value.clone();
                let gatev = self.nodes[gate].value.clone();
                let mut carry = vec![0.0; d];
                for ti in (0..t).rev() {
                    for j in 0..d {
                        let total = g[ti * d + j] + carry[j];
                        let prev = if ti == 0 { 0.0 } else { sv[(ti - 1) * d + j] };
                        self.nodes[x].grad[ti * d + j] += total;
                        self.nodes[gate].grad[ti * d + j] += total * prev;
                        carry[j] = total * gatev[ti * d + j];
                    }
                }
            }
            Record::LayerNorm { a, scale, shift, out } => {
                let g = self.take_grad(out);
                let (r, c) = self.shape(a);
                let av = self.nodes[a].value.clone();
                let scalev = self.nodes[scale].value.clone();
                for i in 0..r {
                    let row = &av[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                    // h = scale ⊙ dy; dx = inv·(h − mean(h) − x̂·mean(h ⊙ x̂))
                    let gr = &g[i * c..(i + 1) * c];
                    let h: Vec<f64> = (0..c).map(|j| scalev[j] * gr[j]).collect();
                    let mh = h.iter().sum::<f64>() / c as f64;
                    let mhx = h.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        self.nodes[a].grad[i * c + j] += inv * (h[j] - mh - xhat[j] * mhx);
                        self.nodes[scale].grad[j] += gr[j] * xhat[j];
                        self.nodes[shift].grad[j] += gr[j];
                    }
                }
            }
            Record::RowSoftmax { a, out } => {
                let g = self.take_grad(out);
                let (r, c) = self.shape(a);
                let ov = self.nodes[out].value.clone();
                for i in 0..r {
                    let y = &ov[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dotgy: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        self.nodes[a].grad[i * c + j] += y[j] * (gr[j] - dotgy);
                    }
                }
            }
            Record::RowLse { a, out } => {
                let g = self.take_grad(out);
                let (r, c) = self.shape(a);
                let av = self.nodes[a].value.clone();
                for i in 0..r {
                    let row = &av[i * c..(i + 1) * c];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
                    for j in 0..c {
                        self.nodes[a].grad[i * c + j] += g[i] * (row[j] - max).exp() / sum;
                    }
                }
            }
            Record::ColMean { a, out } => {
                let g = self.take_grad(out);
                let (r, c) = self.shape(a);
                for i in 0..r {
                    for j in 0..c {
                        self.nodes[a].grad[i * c + j] += g[j] / r as f64;
                    }
                }
            }
            Record::MeanAll { a, out } => {
                let g = self.take_grad(out)[0];
                let n = self.nodes[a].value.len() as f64;
                for dst in self.nodes[a].grad.iter_mut() {
                    *dst += g / n;
                }
            }
            Record::SumAll { a, out } => {
                let g = self.take_grad(out)[0];
                for dst in self.nodes[a].grad.iter_mut() {
                    *dst += g;
                }
            }
            Record::QLogQ { q, out } => {
                let g = self.take_grad(out)[0];
                let qv = self.nodes[q].value.clone();
                for i in 0..qv.len() {
                    if qv[i] > 0.0 {
                        self.nodes[q].grad[i] += g * (qv[i].ln() + 1.0);
                    }
                }
            }
            Record::RowExpMap { a, out, c } => {
                let g = self.take_grad(out);
                let (r, cols) = self.shape(a);
                let av = self.nodes[a].value.clone();
                for i in 0..r {
                    manifold::exp_map_origin_vjp(
                        &av[i * cols..(i + 1) * cols],
                        c,
                        &g[i * cols..(i + 1) * cols],
                        &mut self.nodes[a].grad[i * cols..(i + 1) * cols],
                    );
                }
            }
            Record::PairGeoDist { a, b, out, c } => {
                let g = self.take_grad(out);
                let (m, h) = self.shape(a);
                let (k, _) = self.shape(b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for i in 0..m {
                    for j in 0..k {
                        let seed = g[i * k + j];
                        if seed == 0.0 {
                            continue;
                        }
                        manifold::grad_geodesic_distance_raw(
                            &av[i * h..(i + 1) * h],
                            &bv[j * h..(j + 1) * h],
                            c,
                            seed,
                            &mut ga[i * h..(i + 1) * h],
                            &mut gb[j * h..(j + 1) * h],
                        );
                    }
                }
                for (dst, src) in self.nodes[a].grad.iter_mut().zip(&ga) {
                    *dst += src;
                }
                for (dst, src) in self.nodes[b].grad.iter_mut().zip(&gb) {
                    *dst += src;
                }
            }
            Record::PairEucDist { a, b, out } => {
                let g = self.take_grad(out);
                let (m, h) = self.shape(a);
                let (k, _) = self.shape(b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for i in 0..m {
                    for j in 0..k {
                        let seed = g[i * k + j];
                        if seed == 0.0 {
                            continue;
                        }
                        manifold::grad_euclidean_distance_raw(
                            &av[i * h..(i + 1) * h],
                            &bv[j * h..(j + 1) * h],
                            seed,
                            &mut ga[i * h..(i + 1) * h],
                            &mut gb[j * h..(j + 1) * h],
                        );
                    }
                }
                for (dst, src) in self.nodes[a].grad.iter_mut().zip(&ga) {
                    *dst += src;
                }
                for (dst, src) in self.nodes[b].grad.iter_mut().zip(&gb) {
                    *dst += src;
                }
            }
            Record::Pick { a, idx, out } => {
                let g = self.take_grad(out)[0];
                self.nodes[a].grad[idx] += g;
            }
            Record::BceFromLogits { s_neg, s_pos, fake, out } => {
                let g = self.take_grad(out)[0];
                let sn = self.nodes[s_neg].value[0];
                let sp = self.nodes[s_pos].value[0];
                if fake {
                    // L = softplus(s₋ − s₊)
                    let s = sigmoid(sn - sp);
                    self.nodes[s_neg].grad[0] += g * s;
                    self.nodes[s_pos].grad[0] -= g * s;
                } else {
                    let s = sigmoid(sp - sn);
                    self.nodes[s_pos].grad[0] += g * s;
                    self.nodes[s_neg].grad[0] -= g * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
    }

    /// Finite-difference check of an arbitrary scalar-valued tape program
    /// with respect to one leaf node's entries.
    fn check_grad<F>(build: F, leaf_data: &[f64], rows: usize, cols: usize, tol: f64)
    where
        F: Fn(&mut Tape, NodeId) -> NodeId,
    {
        let mut tape = Tape::new();
        let leaf = tape.input(rows, cols, leaf_data);
        let loss = build(&mut tape, leaf);
        tape.backward(loss, 1.0);
        let analytic = tape.grad(leaf).to_vec();

        let h = 1e-6;
        for i in 0..leaf_data.len() {
            let mut plus = leaf_data.to_vec();
            plus[i] += h;
            let mut tp = Tape::new();
            let lp = tp.input(rows, cols, &plus);
            let np = build(&mut tp, lp);
            let vp = tp.scalar(np);

            let mut minus = leaf_data.to_vec();
            minus[i] -= h;
            let mut tm = Tape::new();
            let lm = tm.input(rows, cols, &minus);
            let nm = build(&mut tm, lm);
            let vm = tm.scalar(nm);

            let fd = (vp - vm) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1e-3);
            assert!(rel < tol, "entry {i}: analytic {} vs fd {}", analytic[i], fd);
        }
    }

    #[test]
    fn trivial_gradients() {
        // L = sum(θ) → grad all ones.
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let pid = store.add("theta", 1, 4, vec![0.5, -1.0, 2.0, 0.0]);
        let leaf = tape.param(&store, pid);
        let loss = tape.sum_all(leaf);
        tape.backward(loss, 1.0);
        tape.export_grads(&mut store);
        assert_eq!(store.get(pid).grad, vec![1.0; 4]);

        // L = ½‖θ‖² → grad = θ.
        let mut tape = Tape::new();
        store.zero_grads();
        let leaf = tape.param(&store, pid);
        let sq = tape.mul(leaf, leaf);
        let s = tape.sum_all(sq);
        let loss = tape.scale(s, 0.5);
        tape.backward(loss, 1.0);
        tape.export_grads(&mut store);
        assert_eq!(store.get(pid).grad, store.get(pid).values);
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut store = ParamStore::new();
        let used = store.add("used", 1, 3, vec![1.0, 2.0, 3.0]);
        let unused = store.add("unused", 1, 2, vec![5.0, 6.0]);
        let mut tape = Tape::new();
        let a = tape.param(&store, used);
        let _b = tape.param(&store, unused);
        let loss = tape.sum_all(a);
        tape.backward(loss, 1.0);
        tape.export_grads(&mut store);
        assert_eq!(store.get(unused).grad, vec![0.0, 0.0]);
    }

    #[test]
    fn matmul_forward_and_grad() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = vec![1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3×2
        let mut tape = Tape::new();
        let na = tape.input(2, 3, &a);
        let nb = tape.input(3, 2, &b);
        let c = tape.matmul(na, nb, false, false);
        assert_eq!(tape.value(c), &[-1.0, 7.5, -1.0, 18.0]);

        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let other = vec![0.3, -0.2, 0.7, 1.1, -0.5, 0.4];
            let (or_, oc_) = if ta == tb { (3, 2) } else { (2, 3) };
            // pick shapes so the product is valid: base leaf is 2×3
            let (lr, lc) = (2, 3);
            let leaf = rand_vec(&mut ChaCha8Rng::seed_from_u64(1), 6, 1.0);
            check_grad(
                move |t, l| {
                    let o = t.input(or_, oc_, &other);
                    let m = if ta {
                        // op(leafᵀ 3×2)·op(other)
                        t.matmul(l, o, true, tb)
                    } else {
                        t.matmul(l, o, false, tb)
                    };
                    t.sum_all(m)
                },
                &leaf,
                lr,
                lc,
                1e-5,
            );
        }
    }

    #[test]
    fn elementwise_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = rand_vec(&mut rng, 6, 2.0);
        check_grad(|t, l| { let s = t.softplus(l); t.sum_all(s) }, &data, 2, 3, 1e-5);
        check_grad(|t, l| { let s = t.tanh(l); t.sum_all(s) }, &data, 2, 3, 1e-5);
        check_grad(|t, l| { let s = t.exp(l); t.sum_all(s) }, &data, 2, 3, 1e-5);
        check_grad(|t, l| { let s = t.mul(l, l); t.sum_all(s) }, &data, 2, 3, 1e-5);
        check_grad(
            |t, l| {
                let s = t.scale(l, -0.37);
                let s2 = t.add_scaled(l, s, 2.0);
                t.sum_all(s2)
            },
            &data,
            2,
            3,
            1e-5,
        );
    }

    #[test]
    fn broadcast_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = rand_vec(&mut rng, 8, 1.0);
        let row = rand_vec(&mut rng, 4, 1.0);
        let r2 = row.clone();
        check_grad(
            move |t, l| {
                let rv = t.input(1, 4, &row);
                let o = t.add_row(l, rv);
                let o2 = t.mul(o, o);
                t.sum_all(o2)
            },
            &data,
            2,
            4,
            1e-5,
        );
        check_grad(
            move |t, l| {
                let rv = t.input(1, 4, &r2);
                let o = t.mul_row(l, rv);
                t.sum_all(o)
            },
            &data,
            2,
            4,
            1e-5,
        );
        // Gradient wrt the broadcast row itself.
        let mat = rand_vec(&mut rng, 8, 1.0);
        check_grad(
            move |t, l| {
                let m = t.input(2, 4, &mat);
                let o = t.mul_row(m, l);
                let o2 = t.mul(o, o);
                t.sum_all(o2)
            },
            &rand_vec(&mut rng, 4, 1.0),
            1,
            4,
            1e-5,
        );
    }

    #[test]
    fn scan_matches_unrolled_recurrence_and_grad() {
        let gate = vec![0.9, 0.5, 0.1, 0.8, 0.3, 0.7, 0.2, 0.6];
        let x = vec![1.0, -1.0, 0.5, 2.0, -0.5, 0.25, 1.5, -2.0];
        let mut tape = Tape::new();
        let ng = tape.input(4, 2, &gate);
        let nx = tape.input(4, 2, &x);
        let s = tape.scan(ng, nx);
        // Hand-unrolled.
        let mut expect = [0.0; 8];
        for t in 0..4 {
            for j in 0..2 {
                let prev = if t == 0 { 0.0 } else { expect[(t - 1) * 2 + j] };
                expect[t * 2 + j] = gate[t * 2 + j] * prev + x[t * 2 + j];
            }
        }
        for i in 0..8 {
            assert!((tape.value(s)[i] - expect[i]).abs() < 1e-15);
        }

        let x2 = x.clone();
        check_grad(
            move |t, l| {
                let nx = t.input(4, 2, &x2);
                let s = t.scan(l, nx);
                let s2 = t.mul(s, s);
                t.sum_all(s2)
            },
            &gate,
            4,
            2,
            1e-5,
        );
        let gate2: Vec<f64> = vec![0.9, 0.5, 0.1, 0.8, 0.3, 0.7, 0.2, 0.6];
        check_grad(
            move |t, l| {
                let ng = t.input(4, 2, &gate2);
                let s = t.scan(ng, l);
                let s2 = t.mul(s, s);
                t.sum_all(s2)
            },
            &x,
            4,
            2,
            1e-5,
        );
    }

    #[test]
    fn normalization_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = rand_vec(&mut rng, 12, 2.0);
        let scale = rand_vec(&mut rng, 4, 1.0);
        let shift = rand_vec(&mut rng, 4, 1.0);
        let (s2, h2) = (scale.clone(), shift.clone());
        check_grad(
            move |t, l| {
                let sc = t.input(1, 4, &scale);
                let sh = t.input(1, 4, &shift);
                let o = t.layer_norm(l, sc, sh);
                let o2 = t.mul(o, o);
                t.sum_all(o2)
            },
            &data,
            3,
            4,
            1e-4,
        );
        // wrt scale
        let data2 = rand_vec(&mut rng, 12, 2.0);
        check_grad(
            move |t, l| {
                let m = t.input(3, 4, &data2);
                let sh = t.input(1, 4, &h2);
                let o = t.layer_norm(m, l, sh);
                let o2 = t.mul(o, o);
                t.sum_all(o2)
            },
            &s2,
            1,
            4,
            1e-4,
        );

        let data = rand_vec(&mut rng, 8, 3.0);
        check_grad(
            move |t, l| {
                let s = t.row_softmax(l);
                let s2 = t.mul(s, s);
                t.sum_all(s2)
            },
            &data,
            2,
            4,
            1e-5,
        );
        let data = rand_vec(&mut rng, 8, 3.0);
        check_grad(|t, l| { let s = t.row_lse(l); t.sum_all(s) }, &data, 2, 4, 1e-5);
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let data = rand_vec(&mut rng, 15, 50.0);
            let mut tape = Tape::new();
            let l = tape.input(3, 5, &data);
            let s = tape.row_softmax(l);
            for i in 0..3 {
                let row = &tape.value(s)[i * 5..(i + 1) * 5];
                assert!(row.iter().all(|p| *p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reduction_and_pick_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = rand_vec(&mut rng, 6, 1.0);
        check_grad(
            |t, l| {
                let m = t.col_mean(l);
                let m2 = t.mul(m, m);
                t.sum_all(m2)
            },
            &data,
            2,
            3,
            1e-5,
        );
        check_grad(|t, l| t.mean_all(l), &data, 2, 3, 1e-5);
        check_grad(
            |t, l| {
                let p = t.pick(l, 4);
                let q = t.pick(l, 1);
                let s = t.mul(p, q);
                t.sum_all(s)
            },
            &data,
            2,
            3,
            1e-5,
        );
    }

    #[test]
    fn q_log_q_grad() {
        // Probabilities from a softmax so entries stay in (0,1).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = rand_vec(&mut rng, 6, 2.0);
        check_grad(
            |t, l| {
                let q = t.row_softmax(l);
                t.q_log_q(q)
            },
            &logits,
            2,
            3,
            1e-5,
        );
    }

    #[test]
    fn manifold_primitive_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tangents = rand_vec(&mut rng, 8, 1.5);
        check_grad(
            |t, l| {
                let p = t.row_exp_map(l, 1.0);
                let p2 = t.mul(p, p);
                t.sum_all(p2)
            },
            &tangents,
            2,
            4,
            1e-4,
        );

        let pts = rand_vec(&mut rng, 8, 0.3);
        let protos = rand_vec(&mut rng, 12, 0.3);
        let pr = protos.clone();
        check_grad(
            move |t, l| {
                let p = t.input(3, 4, &protos);
                let d = t.pair_geo_dist(l, p, 1.0);
                let d2 = t.mul(d, d);
                t.sum_all(d2)
            },
            &pts,
            2,
            4,
            1e-4,
        );
        let pts2 = rand_vec(&mut rng, 8, 0.3);
        check_grad(
            move |t, l| {
                let x = t.input(2, 4, &pts2);
                let d = t.pair_geo_dist(x, l, 1.0);
                t.sum_all(d)
            },
            &pr,
            3,
            4,
            1e-4,
        );

        let a = rand_vec(&mut rng, 8, 1.0);
        check_grad(
            |t, l| {
                let b = t.input(2, 4, &[0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8]);
                let d = t.pair_euc_dist(l, b);
                let d2 = t.mul(d, d);
                t.sum_all(d2)
            },
            &a,
            2,
            4,
            1e-5,
        );
    }

    #[test]
    fn bce_from_logits_values_and_grad() {
        let mut tape = Tape::new();
        let sn = tape.input(1, 1, &[-2.0]);
        let sp = tape.input(1, 1, &[-2.0]);
        let l = tape.bce_from_logits(sn, sp, true);
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);

        for fake in [true, false] {
            check_grad(
                move |t, l| {
                    let sp = t.pick(l, 0);
                    let sn = t.pick(l, 1);
                    t.bce_from_logits(sn, sp, fake)
                },
                &[0.7, -1.3],
                1,
                2,
                1e-5,
            );
        }
    }

    #[test]
    fn gradient_linearity() {
        // grad(L1 + L2) == grad(L1) + grad(L2), run as separate tapes.
        let mut store = ParamStore::new();
        let pid = store.add("p", 1, 4, vec![0.4, -0.3, 0.9, 0.1]);

        let build_l1 = |tape: &mut Tape, leaf: NodeId| {
            let s = tape.softplus(leaf);
            tape.sum_all(s)
        };
        let build_l2 = |tape: &mut Tape, leaf: NodeId| {
            let s = tape.tanh(leaf);
            let m = tape.mul(s, s);
            tape.sum_all(m)
        };

        store.zero_grads();
        let mut t1 = Tape::new();
        let l1 = t1.param(&store, pid);
        let loss1 = build_l1(&mut t1, l1);
        t1.backward(loss1, 1.0);
        t1.export_grads(&mut store);
        let g1 = store.get(pid).grad.clone();

        store.zero_grads();
        let mut t2 = Tape::new();
        let l2 = t2.param(&store, pid);
        let loss2 = build_l2(&mut t2, l2);
        t2.backward(loss2, 1.0);
        t2.export_grads(&mut store);
        let g2 = store.get(pid).grad.clone();

        store.zero_grads();
        let mut t3 = Tape::new();
        let leaf = t3.param(&store, pid);
        let a = build_l1(&mut t3, leaf);
        let b = build_l2(&mut t3, leaf);
        let total = t3.add(a, b);
        t3.backward(total, 1.0);
        t3.export_grads(&mut store);
        let gsum = store.get(pid).grad.clone();

        for i in 0..4 {
            assert!((gsum[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = rand_vec(&mut rng, 24, 1.0);
        let w = rand_vec(&mut rng, 16, 0.5);

        let run = || {
            let mut store = ParamStore::new();
            let pid = store.add("w", 4, 4, w.clone());
            let mut tape = Tape::new();
            let x = tape.input(6, 4, &data);
            let wn = tape.param(&store, pid);
            let y = tape.matmul(x, wn, false, true);
            let s = tape.tanh(y);
            let sm = tape.row_softmax(s);
            let loss = tape.mean_all(sm);
            tape.backward(loss, 1.0);
            tape.export_grads(&mut store);
            (tape.value(loss)[0].to_bits(), store.get(pid).grad.iter().map(|g| g.to_bits()).collect::<Vec<_>>())
        };

        assert_eq!(run(), run());
    }

    #[test]
    fn clip_grad_norm_bounds_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", 1, 2, vec![0.0, 0.0]);
        let b = store.add("b", 1, 1, vec![0.0]);
        store.get_mut(a).grad = vec![3.0, 4.0];
        store.get_mut(b).grad = vec![12.0];
        let pre = store.clip_grad_norm(1.0);
        assert!((pre - 13.0).abs() < 1e-12);
        assert!(store.grad_global_norm() <= 1.0 + 1e-12);
    }
}
