use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result, Shape};

use super::params::{ParamId, ParameterStore};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Lookup {
        table: ParamId,
        row: usize,
    },
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: NodeId,
    },
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AbsDiff(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    // `probs` holds the softmax for the backward pass.
    SoftmaxXent {
        logits: NodeId,
        gold: usize,
        probs: Vec<f64>,
    },
    Sum(Vec<NodeId>),
    SumElements(NodeId),
    AddConst(NodeId),
    Hinge(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Parameter gradients produced by one backward pass.
///
/// Embedding lookups produce per-row gradients so that a pass touching a
/// handful of words does not materialize the whole table.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    dense: HashMap<ParamId, Vec<f64>>,
    rows: HashMap<(ParamId, usize), Vec<f64>>,
}

impl Gradients {
    pub fn add_dense(&mut self, id: ParamId, g: &[f64]) {
        let acc = self.dense.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }

    fn dense_mut(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        self.dense.entry(id).or_insert_with(|| vec![0.0; len])
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let acc = self
            .rows
            .entry((id, row))
            .or_insert_with(|| vec![0.0; g.len()]);
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }

    pub fn dense(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.dense.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn rows(&self) -> impl Iterator<Item = (ParamId, usize, &[f64])> {
        self.rows.iter().map(|((id, r), g)| (*id, *r, g.as_slice()))
    }

    /// Full gradient of one parameter, with untouched entries as zero.
    pub fn to_dense(&self, id: ParamId, shape: Shape) -> Vec<f64> {
        let mut out = self
            .dense
            .get(&id)
            .cloned()
            .unwrap_or_else(|| vec![0.0; shape.len()]);
        for ((pid, r), g) in &self.rows {
            if *pid == id {
                let c = shape.cols;
                for (o, x) in out[r * c..(r + 1) * c].iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
        out
    }

    pub fn touches(&self, id: ParamId) -> bool {
        self.dense.contains_key(&id) || self.rows.keys().any(|(p, _)| *p == id)
    }
}

/// Weights of one LSTM direction. Gates are stacked as input, forget, output,
/// candidate in a `4H x (in + H)` matrix applied to `[x; h_prev]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// Dynamic computation graph over a borrowed [`ParameterStore`].
///
/// Values are computed eagerly as nodes are added, so inputs always precede
/// their consumers. A graph supports a single backward pass.
pub struct Graph<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    differentiated: bool,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            grads: Vec::new(),
            differentiated: false,
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
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

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    /// Gradient of the loss with respect to a node, after `backward`.
    /// Nodes the loss does not depend on report zeros.
    pub fn grad(&self, id: NodeId) -> Vec<f64> {
        match self.grads.get(id.0) {
            Some(g) if !g.is_empty() => g.clone(),
            _ => vec![0.0; self.nodes[id.0].value.len()],
        }
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.len(), value.len());
        self.nodes.push(Node { op, shape, value });
        NodeId(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    /// Constant column vector.
    pub fn input(&mut self, values: Vec<f64>) -> NodeId {
        let shape = Shape::vector(values.len());
        self.push(Op::Input, shape, values)
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.input(vec![0.0; len])
    }

    /// The whole parameter as a node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let p = self.store.get(id);
        let shape = p.shape();
        self.push(Op::Param(id), shape, p.value().to_vec())
    }

    /// Row `row` of an embedding table as a column vector.
    pub fn lookup(&mut self, table: ParamId, row: usize) -> Result<NodeId> {
        let p = self.store.get(table);
        let shape = p.shape();
        if row >= shape.rows {
            return Err(Error::IndexOutOfRange {
                table: p.name().to_owned(),
                index: row,
                rows: shape.rows,
            });
        }
        let value = p.row(row).to_vec();
        Ok(self.push(Op::Lookup { table, row }, Shape::vector(shape.cols), value))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: NodeId) -> Result<NodeId> {
        let wp = self.store.get(w);
        let ws = wp.shape();
        let xs = self.shape(x);
        if xs.cols != 1 || xs.rows != ws.cols {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: ws,
                right: xs,
            });
        }
        let mut out = match b {
            Some(b) => {
                let bs = self.store.shape(b);
                if bs != Shape::vector(ws.rows) {
                    return Err(Error::ShapeMismatch {
                        op: "affine bias",
                        left: ws,
                        right: bs,
                    });
                }
                self.store.value(b).to_vec()
            }
            None => vec![0.0; ws.rows],
        };
        let xv = &self.nodes[x.0].value;
        let wv = wp.value();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wv[r * ws.cols..(r + 1) * ws.cols];
            *o += dot(row, xv);
        }
        Ok(self.push(Op::Affine { w, b, x }, Shape::vector(ws.rows), out))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut value = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.cols != 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: Shape::vector(value.len()),
                    right: s,
                });
            }
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let shape = Shape::vector(value.len());
        Ok(self.push(Op::Concat(parts.to_vec()), shape, value))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        if xs.cols != 1 || start + len > xs.rows {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: xs,
                right: Shape::vector(start + len),
            });
        }
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, Shape::vector(len), value))
    }

    fn zip_with(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a);
        self.push(op, shape, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// Elementwise `|a - b|`.
    pub fn abs_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("abs_diff", a, b)?;
        Ok(self.zip_with(Op::AbsDiff(a, b), a, b, |x, y| (x - y).abs()))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x);
        self.push(Op::Tanh(x), shape, value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x);
        self.push(Op::Sigmoid(x), shape, value)
    }

    /// Inverted dropout: each entry is kept with probability `keep` and scaled
    /// by `1 / keep`. With `keep >= 1` this is the identity and adds no node.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, keep: f64, rng: &mut R) -> NodeId {
        if keep >= 1.0 {
            return x;
        }
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let value = self.nodes[x.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x);
        self.push(Op::Dropout { x, mask }, shape, value)
    }

    /// Fused softmax and cross-entropy against a gold index; scalar output.
    pub fn softmax_xent(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let s = self.shape(logits);
        if gold >= s.len() {
            return Err(Error::IndexOutOfRange {
                table: "softmax".to_owned(),
                index: gold,
                rows: s.len(),
            });
        }
        let z = &self.nodes[logits.0].value;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - z[gold];
        let probs = exps.into_iter().map(|e| e / total).collect();
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                gold,
                probs,
            },
            Shape::SCALAR,
            vec![loss],
        ))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Ok(self.input(vec![0.0]));
        };
        let shape = self.shape(first);
        let mut value = vec![0.0; shape.len()];
        for &p in parts {
            self.same_shape("sum", first, p)?;
            for (v, x) in value.iter_mut().zip(&self.nodes[p.0].value) {
                *v += x;
            }
        }
        Ok(self.push(Op::Sum(parts.to_vec()), shape, value))
    }

    /// Sum of all entries; scalar output.
    pub fn sum_elements(&mut self, x: NodeId) -> NodeId {
        let total = self.nodes[x.0].value.iter().sum();
        self.push(Op::SumElements(x), Shape::SCALAR, vec![total])
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v + c).collect();
        let shape = self.shape(x);
        self.push(Op::AddConst(x), shape, value)
    }

    /// `max(0, x)` for a scalar.
    pub fn hinge(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if !s.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "hinge",
                left: s,
                right: Shape::SCALAR,
            });
        }
        let v = self.nodes[x.0].value[0].max(0.0);
        Ok(self.push(Op::Hinge(x), Shape::SCALAR, vec![v]))
    }

    /// One LSTM step; returns the new hidden and cell states.
    pub fn lstm_step(
        &mut self,
        p: &LstmParams,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let h = p.hidden;
        let input = self.concat(&[x, h_prev])?;
        let gates = self.affine(p.w, Some(p.b), input)?;
        let i_pre = self.slice(gates, 0, h)?;
        let f_pre = self.slice(gates, h, h)?;
        let o_pre = self.slice(gates, 2 * h, h)?;
        let g_pre = self.slice(gates, 3 * h, h)?;
        let i = self.sigmoid(i_pre);
        let f = self.sigmoid(f_pre);
        let o = self.sigmoid(o_pre);
        let g = self.tanh(g_pre);
        let keep = self.mul(f, c_prev)?;
        let write = self.mul(i, g)?;
        let c = self.add(keep, write)?;
        let c_act = self.tanh(c);
        let h_new = self.mul(o, c_act)?;
        Ok((h_new, c))
    }

    /// Runs an LSTM over `xs` in order and returns the hidden state at each step.
    pub fn lstm(&mut self, p: &LstmParams, xs: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut h = self.zeros(p.hidden);
        let mut c = self.zeros(p.hidden);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let (h2, c2) = self.lstm_step(p, x, h, c)?;
            h = h2;
            c = c2;
            out.push(h);
        }
        Ok(out)
    }

    fn grad_mut(&mut self, id: NodeId) -> &mut Vec<f64> {
        let len = self.nodes[id.0].value.len();
        grad_entry(&mut self.grads, id, len)
    }

    /// Reverse-mode pass from a scalar loss node. Returns the parameter
    /// gradients; node gradients remain queryable through [`Graph::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.differentiated {
            return Err(Error::GraphConsumed);
        }
        let s = self.shape(loss);
        if !s.is_scalar() {
            return Err(Error::NonScalarLoss(s));
        }
        self.differentiated = true;
        self.grads = vec![Vec::new(); self.nodes.len()];
        self.grads[loss.0] = vec![1.0];
        let mut out = Gradients::default();
        let store = self.store;

        for idx in (0..=loss.0).rev() {
            if self.grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut self.grads[idx]);
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Input);
            match &op {
                Op::Input => {}
                Op::Param(id) => out.add_dense(*id, &g),
                Op::Lookup { table, row } => out.add_row(*table, *row, &g),
                Op::Affine { w, b, x } => {
                    let wp = store.get(*w);
                    let cols = wp.shape().cols;
                    let wv = wp.value();
                    let xv = &self.nodes[x.0].value;
                    let dw = out.dense_mut(*w, wv.len());
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, xv, &mut dw[r * cols..(r + 1) * cols]);
                        }
                    }
                    if let Some(b) = b {
                        out.add_dense(*b, &g);
                    }
                    let dx = grad_entry(&mut self.grads, *x, cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, &wv[r * cols..(r + 1) * cols], dx);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        let dp = self.grad_mut(p);
                        for (d, x) in dp.iter_mut().zip(&g[offset..offset + len]) {
                            *d += x;
                        }
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let start = *start;
                    let dx = self.grad_mut(*x);
                    for (d, v) in dx[start..start + g.len()].iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, self.grad_mut(*a));
                    axpy(1.0, &g, self.grad_mut(*b));
                }
                Op::Sub(a, b) => {
                    axpy(1.0, &g, self.grad_mut(*a));
                    axpy(-1.0, &g, self.grad_mut(*b));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da = grad_entry(&mut self.grads, a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                    let db = grad_entry(&mut self.grads, b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
                Op::AbsDiff(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    // Subgradient 0 where the inputs coincide.
                    let sign = |i: usize| match av[i].partial_cmp(&bv[i]) {
                        Some(std::cmp::Ordering::Greater) => 1.0,
                        Some(std::cmp::Ordering::Less) => -1.0,
                        _ => 0.0,
                    };
                    let da = grad_entry(&mut self.grads, a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * sign(i);
                    }
                    let db = grad_entry(&mut self.grads, b, g.len());
                    for i in 0..g.len() {
                        db[i] -= g[i] * sign(i);
                    }
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[idx].value;
                    let dx = grad_entry(&mut self.grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[idx].value;
                    let dx = grad_entry(&mut self.grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = self.grad_mut(*x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * mask[i];
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    gold,
                    probs,
                } => {
                    let g0 = g[0];
                    let dz = self.grad_mut(*logits);
                    for (i, p) in probs.iter().enumerate() {
                        dz[i] += g0 * p;
                    }
                    dz[*gold] -= g0;
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        axpy(1.0, &g, self.grad_mut(p));
                    }
                }
                Op::SumElements(x) => {
                    let g0 = g[0];
                    self.grad_mut(*x).iter_mut().for_each(|d| *d += g0);
                }
                Op::AddConst(x) => axpy(1.0, &g, self.grad_mut(*x)),
                Op::Hinge(x) => {
                    if self.nodes[x.0].value[0] > 0.0 {
                        axpy(1.0, &g, self.grad_mut(*x));
                    }
                }
            }
            self.nodes[idx].op = op;
            self.grads[idx] = g;
        }
        Ok(out)
    }
}

fn grad_entry(grads: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut Vec<f64> {
    let g = &mut grads[id.0];
    if g.is_empty() {
        g.resize(len, 0.0);
    }
    g
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = i * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        total += a[k] * b[k];
    }
    total
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
