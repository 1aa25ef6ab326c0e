//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Every node holds a dense value (a matrix is stored row-major with its
//! shape). Nodes are appended in evaluation order, so a single reverse sweep
//! over the node list is a valid topological backward pass.

use alloc::vec;
use alloc::vec::Vec;

use super::{dot, relu, sigmoid, weighted_softmax_unchecked, ParamStore, ZERO_NORM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatVec { w: NodeId, x: NodeId },
    MatVecCols { w: NodeId, x: NodeId, offset: usize },
    Add(NodeId, NodeId),
    AddScalar { v: NodeId, s: NodeId },
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    DotMany { q: NodeId, keys: Vec<NodeId>, scale: f64 },
    Relu(NodeId),
    Softmax(NodeId),
    WeightedSoftmax { logits: NodeId, gates: NodeId, scaled_exps: Vec<f64> },
    WeightedSum { weights: NodeId, items: Vec<NodeId> },
    MaxPool { items: Vec<NodeId>, argmax: Vec<usize> },
    Cosine(NodeId, NodeId),
    Sigmoid(NodeId),
    BceWithLogit { logit: NodeId, target: f64 },
    Sum(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every store entry, indexed like the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients { grads: store.iter().map(|p| vec![0.0; p.len()]).collect() }
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.grads[index]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(|g| g.as_slice())
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<(usize, NodeId)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>, rows: usize, cols: usize, needs_grad: bool) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, value, rows, cols, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant column vector.
    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        let n = value.len();
        self.push(Op::Leaf, value, n, 1, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, value, rows, cols, false)
    }

    /// Leaf bound to store entry `index`. Repeated calls for the same entry share one node.
    pub fn param(&mut self, store: &ParamStore, index: usize) -> NodeId {
        if let Some((_, id)) = self.param_nodes.iter().find(|(i, _)| *i == index) {
            return *id;
        }
        let p = store.param(index);
        let (rows, cols) = match p.shape.as_slice() {
            [r, c] => (*r, *c),
            _ => (p.len(), 1),
        };
        let id = self.push(Op::Param(index), p.data.clone(), rows, cols, true);
        self.param_nodes.push((index, id));
        id
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (wn, xn) = (&self.nodes[w.0], &self.nodes[x.0]);
        assert_eq!(wn.cols, xn.value.len(), "tape matvec dimension mismatch");
        let value: Vec<f64> = wn.value.chunks_exact(wn.cols).map(|row| dot(row, &xn.value)).collect();
        let rows = wn.rows;
        let ng = wn.needs_grad || xn.needs_grad;
        self.push(Op::MatVec { w, x }, value, rows, 1, ng)
    }

    /// `W[:, offset..offset + len(x)] x`: one column block of a matrix applied to `x`.
    pub fn matvec_cols(&mut self, w: NodeId, x: NodeId, offset: usize) -> NodeId {
        let (wn, xn) = (&self.nodes[w.0], &self.nodes[x.0]);
        let len = xn.value.len();
        assert!(offset + len <= wn.cols, "tape matvec_cols block out of range");
        let value: Vec<f64> = wn.value.chunks_exact(wn.cols).map(|row| dot(&row[offset..offset + len], &xn.value)).collect();
        let rows = wn.rows;
        let ng = wn.needs_grad || xn.needs_grad;
        self.push(Op::MatVecCols { w, x, offset }, value, rows, 1, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (an, bn) = (&self.nodes[a.0], &self.nodes[b.0]);
        assert_eq!(an.value.len(), bn.value.len(), "tape add dimension mismatch");
        let value = an.value.iter().zip(&bn.value).map(|(x, y)| x + y).collect();
        let (r, c) = (an.rows, an.cols);
        let ng = an.needs_grad || bn.needs_grad;
        self.push(Op::Add(a, b), value, r, c, ng)
    }

    /// Adds the scalar node `s` to every entry of `v`.
    pub fn add_scalar(&mut self, v: NodeId, s: NodeId) -> NodeId {
        let sv = self.scalar(s);
        let vn = &self.nodes[v.0];
        let value = vn.value.iter().map(|x| x + sv).collect();
        let (r, c) = (vn.rows, vn.cols);
        let ng = vn.needs_grad || self.ng(s);
        self.push(Op::AddScalar { v, s }, value, r, c, ng)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let an = &self.nodes[a.0];
        let value = an.value.iter().map(|x| x * s).collect();
        let (r, c, ng) = (an.rows, an.cols, an.needs_grad);
        self.push(Op::Scale(a, s), value, r, c, ng)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        let mut ng = false;
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
            ng |= self.ng(*p);
        }
        let n = value.len();
        self.push(Op::Concat(parts.to_vec()), value, n, 1, ng)
    }

    /// `scale * <q, k_j>` for every key, as one vector.
    pub fn dot_many(&mut self, q: NodeId, keys: &[NodeId], scale: f64) -> NodeId {
        let qv = &self.nodes[q.0].value;
        let value: Vec<f64> = keys.iter().map(|k| scale * dot(qv, &self.nodes[k.0].value)).collect();
        let ng = self.ng(q) || keys.iter().any(|k| self.ng(*k));
        let n = value.len();
        self.push(Op::DotMany { q, keys: keys.to_vec(), scale }, value, n, 1, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let an = &self.nodes[a.0];
        let value = an.value.iter().map(|x| relu(*x)).collect();
        let (r, c, ng) = (an.rows, an.cols, an.needs_grad);
        self.push(Op::Relu(a), value, r, c, ng)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let an = &self.nodes[a.0];
        let value = super::softmax(&an.value).expect("tape softmax of empty node");
        let (n, ng) = (value.len(), an.needs_grad);
        self.push(Op::Softmax(a), value, n, 1, ng)
    }

    pub fn weighted_softmax(&mut self, logits: NodeId, gates: NodeId) -> NodeId {
        let (value, scaled_exps) = weighted_softmax_unchecked(&self.nodes[logits.0].value, &self.nodes[gates.0].value);
        let ng = self.ng(logits) || self.ng(gates);
        let n = value.len();
        self.push(Op::WeightedSoftmax { logits, gates, scaled_exps }, value, n, 1, ng)
    }

    /// `sum_k weights[k] * items[k]`.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> NodeId {
        let w = &self.nodes[weights.0].value;
        assert_eq!(w.len(), items.len(), "tape weighted_sum arity mismatch");
        let d = self.nodes[items[0].0].value.len();
        let mut value = vec![0.0; d];
        for (wk, it) in w.iter().zip(items) {
            super::axpy(&mut value, *wk, &self.nodes[it.0].value);
        }
        let ng = self.ng(weights) || items.iter().any(|i| self.ng(*i));
        self.push(Op::WeightedSum { weights, items: items.to_vec() }, value, d, 1, ng)
    }

    /// Elementwise maximum over items; ties resolve to the earliest item.
    pub fn max_pool(&mut self, items: &[NodeId]) -> NodeId {
        let d = self.nodes[items[0].0].value.len();
        let mut value = vec![f64::NEG_INFINITY; d];
        let mut argmax = vec![0; d];
        for (k, it) in items.iter().enumerate() {
            for (i, x) in self.nodes[it.0].value.iter().enumerate() {
                if *x > value[i] {
                    value[i] = *x;
                    argmax[i] = k;
                }
            }
        }
        let ng = items.iter().any(|i| self.ng(*i));
        self.push(Op::MaxPool { items: items.to_vec(), argmax }, value, d, 1, ng)
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let c = super::cosine_unchecked(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Cosine(a, b), vec![c], 1, 1, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let an = &self.nodes[a.0];
        let value = an.value.iter().map(|x| sigmoid(*x)).collect();
        let (r, c, ng) = (an.rows, an.cols, an.needs_grad);
        self.push(Op::Sigmoid(a), value, r, c, ng)
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target`.
    pub fn bce_with_logit(&mut self, logit: NodeId, target: f64) -> NodeId {
        let z = self.scalar(logit);
        let ng = self.ng(logit);
        self.push(Op::BceWithLogit { logit, target }, vec![super::bce_with_logit(z, target)], 1, 1, ng)
    }

    pub fn sum(&mut self, items: &[NodeId]) -> NodeId {
        let d = self.nodes[items[0].0].value.len();
        let mut value = vec![0.0; d];
        for it in items {
            super::add_assign(&mut value, &self.nodes[it.0].value);
        }
        let ng = items.iter().any(|i| self.ng(*i));
        self.push(Op::Sum(items.to_vec()), value, d, 1, ng)
    }

    /// Gradients of the scalar node `output` with respect to every store entry.
    pub fn backward(&self, output: NodeId, store: &ParamStore) -> Gradients {
        let mut result = Gradients::zeros_like(store);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(vec![1.0; self.nodes[output.0].value.len()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let send = |adj: &mut Vec<Option<Vec<f64>>>, target: NodeId, contrib: &dyn Fn(&mut [f64])| {
                if !self.nodes[target.0].needs_grad {
                    return;
                }
                let slot = adj[target.0].get_or_insert_with(|| vec![0.0; self.nodes[target.0].value.len()]);
                contrib(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pi) => super::add_assign(&mut result.grads[*pi], &g),
                Op::MatVec { w, x } => {
                    let wn = &self.nodes[w.0];
                    let xv = &self.nodes[x.0].value;
                    let cols = wn.cols;
                    send(&mut adj, *w, &|s| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                super::axpy(&mut s[r * cols..(r + 1) * cols], *gr, xv);
                            }
                        }
                    });
                    send(&mut adj, *x, &|s| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                super::axpy(s, *gr, &wn.value[r * cols..(r + 1) * cols]);
                            }
                        }
                    });
                }
                Op::MatVecCols { w, x, offset } => {
                    let wn = &self.nodes[w.0];
                    let xv = &self.nodes[x.0].value;
                    let (cols, len, off) = (wn.cols, xv.len(), *offset);
                    send(&mut adj, *w, &|s| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                super::axpy(&mut s[r * cols + off..r * cols + off + len], *gr, xv);
                            }
                        }
                    });
                    send(&mut adj, *x, &|s| {
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                super::axpy(s, *gr, &wn.value[r * cols + off..r * cols + off + len]);
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    send(&mut adj, *a, &|s| super::add_assign(s, &g));
                    send(&mut adj, *b, &|s| super::add_assign(s, &g));
                }
                Op::AddScalar { v, s: sc } => {
                    send(&mut adj, *v, &|s| super::add_assign(s, &g));
                    let total: f64 = g.iter().sum();
                    send(&mut adj, *sc, &|s| s[0] += total);
                }
                Op::Scale(a, k) => send(&mut adj, *a, &|s| super::axpy(s, *k, &g)),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        let piece = &g[off..off + n];
                        send(&mut adj, *p, &|s| super::add_assign(s, piece));
                        off += n;
                    }
                }
                Op::DotMany { q, keys, scale } => {
                    let qv = &self.nodes[q.0].value;
                    send(&mut adj, *q, &|s| {
                        for (k, gk) in keys.iter().zip(&g) {
                            super::axpy(s, scale * gk, &self.nodes[k.0].value);
                        }
                    });
                    for (k, gk) in keys.iter().zip(&g) {
                        send(&mut adj, *k, &|s| super::axpy(s, scale * gk, qv));
                    }
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    send(&mut adj, *a, &|s| {
                        for ((si, gi), xi) in s.iter_mut().zip(&g).zip(av) {
                            if *xi > 0.0 {
                                *si += gi;
                            }
                        }
                    });
                }
                Op::Softmax(a) => {
                    let w = &node.value;
                    let inner = dot(w, &g);
                    send(&mut adj, *a, &|s| {
                        for ((si, wi), gi) in s.iter_mut().zip(w).zip(&g) {
                            *si += wi * (gi - inner);
                        }
                    });
                }
                Op::WeightedSoftmax { logits, gates, scaled_exps } => {
                    if !scaled_exps.is_empty() {
                        let w = &node.value;
                        let inner = dot(w, &g);
                        send(&mut adj, *logits, &|s| {
                            for ((si, wi), gi) in s.iter_mut().zip(w).zip(&g) {
                                *si += wi * (gi - inner);
                            }
                        });
                        send(&mut adj, *gates, &|s| {
                            for ((si, ei), gi) in s.iter_mut().zip(scaled_exps).zip(&g) {
                                *si += ei * (gi - inner);
                            }
                        });
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &self.nodes[weights.0].value;
                    send(&mut adj, *weights, &|s| {
                        for (si, it) in s.iter_mut().zip(items) {
                            *si += dot(&g, &self.nodes[it.0].value);
                        }
                    });
                    for (wk, it) in wv.iter().zip(items) {
                        send(&mut adj, *it, &|s| super::axpy(s, *wk, &g));
                    }
                }
                Op::MaxPool { items, argmax } => {
                    for (k, it) in items.iter().enumerate() {
                        send(&mut adj, *it, &|s| {
                            for (i, am) in argmax.iter().enumerate() {
                                if *am == k {
                                    s[i] += g[i];
                                }
                            }
                        });
                    }
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (na, nb) = (super::norm(av), super::norm(bv));
                    if na >= ZERO_NORM && nb >= ZERO_NORM {
                        let c = dot(av, bv) / (na * nb);
                        let gs = g[0];
                        send(&mut adj, *a, &|s| {
                            for ((si, ai), bi) in s.iter_mut().zip(av).zip(bv) {
                                *si += gs * (bi / (na * nb) - c * ai / (na * na));
                            }
                        });
                        send(&mut adj, *b, &|s| {
                            for ((si, bi), ai) in s.iter_mut().zip(bv).zip(av) {
                                *si += gs * (ai / (na * nb) - c * bi / (nb * nb));
                            }
                        });
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(&mut adj, *a, &|s| {
                        for ((si, yi), gi) in s.iter_mut().zip(y).zip(&g) {
                            *si += gi * yi * (1.0 - yi);
                        }
                    });
                }
                Op::BceWithLogit { logit, target } => {
                    let z = self.nodes[logit.0].value[0];
                    let d = g[0] * (sigmoid(z) - target);
                    send(&mut adj, *logit, &|s| s[0] += d);
                }
                Op::Sum(items) => {
                    for it in items {
                        send(&mut adj, *it, &|s| super::add_assign(s, &g));
                    }
                }
            }
        }
        result
    }
}
