//! Minimal reverse-mode automatic differentiation over vector values.
//!
//! A [`Tape`] records the forward computation of one sentence as a flat list
//! of vector-valued nodes. [`Tape::backward`] replays the list in reverse and
//! accumulates exact gradients into a [`Gradients`] buffer keyed by the same
//! [`ParamId`]s as the parameter store. Nodes only ever reference earlier
//! nodes, so a single reverse sweep suffices.

use crate::tensor::{Gradients, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

enum Op {
    /// Leaf with no gradient (inputs, frozen embeddings).
    Constant,
    /// Leaf view of a whole parameter tensor (biases).
    ParamVec(ParamId),
    /// Leaf view of one row of a parameter matrix (embedding rows).
    ParamRow(ParamId, usize),
    /// `W x` for a parameter matrix `W`.
    MatVec(ParamId, VarId),
    Add(VarId, VarId),
    /// Elementwise product of two recorded values.
    Mul(VarId, VarId),
    /// Elementwise product with a constant factor (dropout masks).
    MulConst(VarId, Vec<f64>),
    Sigmoid(VarId),
    Tanh(VarId),
    Relu(VarId),
    Concat(Vec<VarId>),
    /// Elementwise arithmetic mean of equally sized inputs.
    Mean(Vec<VarId>),
    /// Elementwise maximum; remembers which input won each component.
    MaxElem(Vec<VarId>, Vec<u32>),
    /// Scalar `-log softmax(x)[target]`; remembers the softmax probabilities.
    Nll(VarId, usize, Vec<f64>),
    /// Scalar sum of scalar inputs.
    SumScalars(Vec<VarId>),
}

struct Node {
    op: Op,
    val: Vec<f64>,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn val(&self, id: VarId) -> &[f64] {
        &self.nodes[id.0].val
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Softmax probabilities cached by an [`Tape::nll`] node.
    pub fn softmax_probs(&self, id: VarId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::Nll(_, _, probs) => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, op: Op, val: Vec<f64>) -> VarId {
        self.nodes.push(Node { op, val });
        VarId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, val: Vec<f64>) -> VarId {
        self.push(Op::Constant, val)
    }

    pub fn param_vec(&mut self, id: ParamId) -> VarId {
        let t = self.store.get(id);
        debug_assert_eq!(t.cols(), 1, "param_vec expects a column vector");
        self.push(Op::ParamVec(id), t.data().to_vec())
    }

    pub fn param_row(&mut self, id: ParamId, row: usize) -> VarId {
        let val = self.store.get(id).row(row).to_vec();
        self.push(Op::ParamRow(id, row), val)
    }

    pub fn matvec(&mut self, w: ParamId, x: VarId) -> VarId {
        let val = self.store.get(w).matvec(self.val(x));
        self.push(Op::MatVec(w, x), val)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        debug_assert_eq!(self.val(a).len(), self.val(b).len());
        let val = self
            .val(a)
            .iter()
            .zip(self.val(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), val)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        debug_assert_eq!(self.val(a).len(), self.val(b).len());
        let val = self
            .val(a)
            .iter()
            .zip(self.val(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), val)
    }

    pub fn mul_const(&mut self, a: VarId, factor: Vec<f64>) -> VarId {
        debug_assert_eq!(self.val(a).len(), factor.len());
        let val = self
            .val(a)
            .iter()
            .zip(&factor)
            .map(|(x, m)| x * m)
            .collect();
        self.push(Op::MulConst(a, factor), val)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let val = self.val(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), val)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let val = self.val(a).iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh(a), val)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let val = self.val(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(Op::Relu(a), val)
    }

    pub fn concat(&mut self, parts: &[VarId]) -> VarId {
        let mut val = Vec::new();
        for &p in parts {
            val.extend_from_slice(self.val(p));
        }
        self.push(Op::Concat(parts.to_vec()), val)
    }

    pub fn mean(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "mean over empty set");
        let len = self.val(parts[0]).len();
        let mut val = vec![0.0; len];
        for &p in parts {
            debug_assert_eq!(self.val(p).len(), len);
            for (acc, x) in val.iter_mut().zip(self.val(p)) {
                *acc += x;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        val.iter_mut().for_each(|x| *x *= inv);
        self.push(Op::Mean(parts.to_vec()), val)
    }

    pub fn max_elem(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "max over empty set");
        let len = self.val(parts[0]).len();
        let mut val = self.val(parts[0]).to_vec();
        let mut winner = vec![0u32; len];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            debug_assert_eq!(self.val(p).len(), len);
            for (c, x) in self.val(p).iter().enumerate() {
                if *x > val[c] {
                    val[c] = *x;
                    winner[c] = k as u32;
                }
            }
        }
        self.push(Op::MaxElem(parts.to_vec(), winner), val)
    }

    /// Numerically stable `-log softmax(logits)[target]`, recorded with the
    /// softmax probabilities so both the loss and the distribution are
    /// available afterwards.
    pub fn nll(&mut self, logits: VarId, target: usize) -> VarId {
        let x = self.val(logits);
        debug_assert!(target < x.len());
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = x.iter().map(|&v| (v - max).exp()).sum();
        let probs = stable_softmax(x);
        let loss = -(x[target] - max - z.ln());
        self.push(Op::Nll(logits, target, probs), vec![loss])
    }

    pub fn sum_scalars(&mut self, parts: &[VarId]) -> VarId {
        let total = parts.iter().map(|&p| self.val(p)[0]).sum();
        self.push(Op::SumScalars(parts.to_vec()), vec![total])
    }

    /// Reverse sweep from a scalar `loss` node, accumulating parameter
    /// gradients (scaled by `seed`) into `grads`.
    pub fn backward(&self, loss: VarId, seed: f64, grads: &mut Gradients) {
        debug_assert_eq!(self.val(loss).len(), 1, "loss must be scalar");
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let Some(d) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::ParamVec(p) => {
                    for (g, x) in grads.get_mut(*p).data_mut().iter_mut().zip(&d) {
                        *g += x;
                    }
                }
                Op::ParamRow(p, row) => {
                    for (g, x) in grads.get_mut(*p).row_mut(*row).iter_mut().zip(&d) {
                        *g += x;
                    }
                }
                Op::MatVec(w, x) => {
                    grads.get_mut(*w).outer_acc(&d, &self.nodes[x.0].val);
                    let dx = acc(&mut adj, *x, self.nodes[x.0].val.len());
                    self.store.get(*w).matvec_t_acc(&d, dx);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, *a, d.len()), &d);
                    add_into(acc(&mut adj, *b, d.len()), &d);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].val, &self.nodes[b.0].val);
                    let da = acc(&mut adj, *a, d.len());
                    for ((g, x), y) in da.iter_mut().zip(&d).zip(vb) {
                        *g += x * y;
                    }
                    let db = acc(&mut adj, *b, d.len());
                    for ((g, x), y) in db.iter_mut().zip(&d).zip(va) {
                        *g += x * y;
                    }
                }
                Op::MulConst(a, factor) => {
                    let da = acc(&mut adj, *a, d.len());
                    for ((g, x), m) in da.iter_mut().zip(&d).zip(factor) {
                        *g += x * m;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].val;
                    let da = acc(&mut adj, *a, d.len());
                    for ((g, x), s) in da.iter_mut().zip(&d).zip(y) {
                        *g += x * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].val;
                    let da = acc(&mut adj, *a, d.len());
                    for ((g, x), t) in da.iter_mut().zip(&d).zip(y) {
                        *g += x * (1.0 - t * t);
                    }
                }
                Op::Relu(a) => {
                    let y = &self.nodes[idx].val;
                    let da = acc(&mut adj, *a, d.len());
                    for ((g, x), out) in da.iter_mut().zip(&d).zip(y) {
                        if *out > 0.0 {
                            *g += x;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].val.len();
                        add_into(acc(&mut adj, p, len), &d[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Mean(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    for &p in parts {
                        let dp = acc(&mut adj, p, d.len());
                        for (g, x) in dp.iter_mut().zip(&d) {
                            *g += x * inv;
                        }
                    }
                }
                Op::MaxElem(parts, winner) => {
                    for (c, &w) in winner.iter().enumerate() {
                        if d[c] != 0.0 {
                            let p = parts[w as usize];
                            acc(&mut adj, p, d.len())[c] += d[c];
                        }
                    }
                }
                Op::Nll(logits, target, probs) => {
                    let dl = d[0];
                    let dx = acc(&mut adj, *logits, probs.len());
                    for (k, (g, p)) in dx.iter_mut().zip(probs).enumerate() {
                        let indicator = if k == *target { 1.0 } else { 0.0 };
                        *g += dl * (p - indicator);
                    }
                }
                Op::SumScalars(parts) => {
                    for &p in parts {
                        acc(&mut adj, p, 1)[0] += d[0];
                    }
                }
            }
        }
    }
}

/// Max-shifted softmax.
pub fn stable_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc(adj: &mut [Option<Vec<f64>>], id: VarId, len: usize) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
