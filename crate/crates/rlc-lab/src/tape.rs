//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records an eager forward computation; [`Graph::backward`]
//! walks the tape once and returns gradients aligned with the registered
//! parameter tensors. Parameters never touched by the loss get zero
//! gradients. Ops cover exactly what the models here need: matrix products,
//! bias broadcasts, elementwise nonlinearities, grouped pooling, and the
//! neighbor aggregation used by the graph baseline.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::{canonical_sum, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone)]
enum Op<S> {
    Param(usize),
    Constant,
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulNT(NodeId, NodeId),
    /// `a * b^T` with each entry accumulated as a canonical sum over equal
    /// contiguous chunks (applied at record time); same gradient as
    /// `MatMulNT` because the derivative is independent of summation order.
    MatMulNTChunked(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `(n x m) + (1 x m)` with the row vector broadcast over rows.
    AddRow(NodeId, NodeId),
    Neg(NodeId),
    MulElem(NodeId, NodeId),
    /// `(n x d) * (n x 1)` with the column vector broadcast over columns.
    ScaleRows(NodeId, NodeId),
    /// `(n x d) * (1 x 1)` scalar broadcast.
    ScaleScalar(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Reshape(NodeId),
    /// Sums consecutive groups of `group` rows (order-canonical accumulation).
    SumGroups(NodeId, usize),
    /// Block-diagonal product with per-graph symmetric adjacency matrices.
    AdjMatMul(NodeId, Rc<Vec<Tensor<S>>>),
    MeanAll(NodeId),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    n_params: usize,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), n_params: 0 }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Registers parameter leaves in order; gradients come back in the same
    /// order from [`Graph::backward`].
    pub fn params(&mut self, tensors: &[Tensor<S>]) -> Vec<NodeId> {
        tensors
            .iter()
            .map(|t| {
                let idx = self.n_params;
                self.n_params += 1;
                self.push(t.clone(), Op::Param(idx))
            })
            .collect()
    }

    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Constant)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatMulNT(a, b)))
    }

    /// `a * b^T` where each output entry is a [`chunked_dot`] over
    /// `n_chunks` chunks. With `n_chunks = 1` this is arithmetic-identical to
    /// [`Graph::matmul_nt`]; with more chunks, permuting chunks of a row of
    /// `a` together with the matching chunks of `b` leaves that output row
    /// bit-identical.
    pub fn matmul_nt_chunked(&mut self, a: NodeId, b: NodeId, n_chunks: usize) -> Result<NodeId> {
        let (n, d) = self.value(a).shape();
        let (m, d2) = self.value(b).shape();
        if d != d2 || n_chunks == 0 || d % n_chunks != 0 {
            return Err(Error::Shape(format!(
                "matmul_nt_chunked: {n}x{d} by {m}x{d2} in {n_chunks} chunks"
            )));
        }
        let mut v = Tensor::zeros(n, m);
        for i in 0..n {
            let xi = self.value(a).row(i);
            for j in 0..m {
                let s = crate::scalar::chunked_dot(xi, self.value(b).row(j), n_chunks);
                v.set(i, j, s);
            }
        }
        Ok(self.push(v, Op::MatMulNTChunked(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (n, m) = self.value(a).shape();
        if self.value(row).shape() != (1, m) {
            return Err(Error::Shape(format!(
                "add_row: {n}x{m} + {:?}",
                self.value(row).shape()
            )));
        }
        let mut v = self.value(a).clone();
        for i in 0..n {
            for j in 0..m {
                let s = v.get(i, j) + self.value(row).get(0, j);
                v.set(i, j, s);
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::MulElem(a, b)))
    }

    pub fn scale_rows(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (n, d) = self.value(a).shape();
        if self.value(col).shape() != (n, 1) {
            return Err(Error::Shape(format!(
                "scale_rows: {n}x{d} by {:?}",
                self.value(col).shape()
            )));
        }
        let mut v = self.value(a).clone();
        for i in 0..n {
            let s = self.value(col).get(i, 0);
            for j in 0..d {
                let x = v.get(i, j) * s;
                v.set(i, j, x);
            }
        }
        Ok(self.push(v, Op::ScaleRows(a, col)))
    }

    pub fn scale_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::Shape("scale_scalar expects a 1x1 scalar node".into()));
        }
        let c = self.value(s).get(0, 0);
        let v = self.value(a).map(|x| x * c);
        Ok(self.push(v, Op::ScaleScalar(a, s)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(a).reshape(rows, cols)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn sum_groups(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let (n, h) = self.value(a).shape();
        if group == 0 || n % group != 0 {
            return Err(Error::Shape(format!("sum_groups: {n} rows, group {group}")));
        }
        let out_rows = n / group;
        let mut v = Tensor::zeros(out_rows, h);
        let mut terms = vec![S::zero(); group];
        for r in 0..out_rows {
            for c in 0..h {
                for g in 0..group {
                    terms[g] = self.value(a).get(r * group + g, c);
                }
                v.set(r, c, canonical_sum(&mut terms));
            }
        }
        Ok(self.push(v, Op::SumGroups(a, group)))
    }

    /// `h` is `(B*n) x width`; each of the `B` symmetric `n x n` adjacency
    /// matrices multiplies its own block of rows.
    pub fn adj_matmul(&mut self, h: NodeId, adj: Rc<Vec<Tensor<S>>>) -> Result<NodeId> {
        let v = apply_adjacency(self.value(h), &adj)?;
        Ok(self.push(v, Op::AdjMatMul(h, adj)))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Shape("mean_all of an empty tensor".into()));
        }
        let n = S::lit(t.len() as f64);
        let mut acc = S::zero();
        for &x in t.data() {
            acc = acc + x;
        }
        Ok(self.push(Tensor::scalar(acc / n), Op::MeanAll(a)))
    }

    /// Backpropagates from a scalar loss node, returning one gradient tensor
    /// per registered parameter (zeros for parameters the loss never used).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Tensor<S>>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::Usage("backward expects a scalar (1x1) loss node".into()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(S::one()));
        let mut param_grads: Vec<Option<Tensor<S>>> = vec![None; self.n_params];

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(p) => {
                    accumulate_opt(&mut param_grads[*p], &g)?;
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    self.accum(&mut grads, *a, da)?;
                    self.accum(&mut grads, *b, db)?;
                }
                Op::MatMulNT(a, b) | Op::MatMulNTChunked(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    self.accum(&mut grads, *a, da)?;
                    self.accum(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, g.clone())?;
                    self.accum(&mut grads, *b, g)?;
                }
                Op::AddRow(a, row) => {
                    let (n, m) = g.shape();
                    let mut dr = Tensor::zeros(1, m);
                    for i in 0..n {
                        for j in 0..m {
                            dr.set(0, j, dr.get(0, j) + g.get(i, j));
                        }
                    }
                    self.accum(&mut grads, *a, g)?;
                    self.accum(&mut grads, *row, dr)?;
                }
                Op::Neg(a) => {
                    self.accum(&mut grads, *a, g.map(|x| -x))?;
                }
                Op::MulElem(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    self.accum(&mut grads, *a, da)?;
                    self.accum(&mut grads, *b, db)?;
                }
                Op::ScaleRows(a, col) => {
                    let (n, d) = g.shape();
                    let mut da = Tensor::zeros(n, d);
                    let mut dcol = Tensor::zeros(n, 1);
                    for i in 0..n {
                        let s = self.value(*col).get(i, 0);
                        let mut acc = S::zero();
                        for j in 0..d {
                            da.set(i, j, g.get(i, j) * s);
                            acc = acc + g.get(i, j) * self.value(*a).get(i, j);
                        }
                        dcol.set(i, 0, acc);
                    }
                    self.accum(&mut grads, *a, da)?;
                    self.accum(&mut grads, *col, dcol)?;
                }
                Op::ScaleScalar(a, s) => {
                    let c = self.value(*s).get(0, 0);
                    let da = g.map(|x| x * c);
                    let mut acc = S::zero();
                    for (&gv, &av) in g.data().iter().zip(self.value(*a).data().iter()) {
                        acc = acc + gv * av;
                    }
                    self.accum(&mut grads, *a, da)?;
                    self.accum(&mut grads, *s, Tensor::scalar(acc))?;
                }
                Op::Relu(a) => {
                    // Subgradient at 0 defined as 0.
                    let da = g.zip_map(self.value(*a), |gv, x| {
                        if x > S::zero() {
                            gv
                        } else {
                            S::zero()
                        }
                    })?;
                    self.accum(&mut grads, *a, da)?;
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |gv, y| gv * (S::one() - y * y))?;
                    self.accum(&mut grads, *a, da)?;
                }
                Op::Softplus(a) => {
                    let da = g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x))?;
                    self.accum(&mut grads, *a, da)?;
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    self.accum(&mut grads, *a, g.reshape(r, c)?)?;
                }
                Op::SumGroups(a, group) => {
                    let (out_rows, h) = g.shape();
                    let mut da = Tensor::zeros(out_rows * group, h);
                    for r in 0..out_rows {
                        for gi in 0..*group {
                            for c in 0..h {
                                da.set(r * group + gi, c, g.get(r, c));
                            }
                        }
                    }
                    self.accum(&mut grads, *a, da)?;
                }
                Op::AdjMatMul(a, adj) => {
                    // Adjacencies are symmetric, so A^T * dOut == A * dOut.
                    let da = apply_adjacency(&g, adj)?;
                    self.accum(&mut grads, *a, da)?;
                }
                Op::MeanAll(a) => {
                    let t = self.value(*a);
                    let c = g.get(0, 0) / S::lit(t.len() as f64);
                    let (r, cl) = t.shape();
                    self.accum(&mut grads, *a, Tensor::from_fn(r, cl, |_, _| c))?;
                }
            }
        }

        param_grads
            .into_iter()
            .enumerate()
            .map(|(p, g)| match g {
                Some(g) => Ok(g),
                None => {
                    // Find the param node's shape to emit a zero gradient.
                    let shape = self
                        .nodes
                        .iter()
                        .find_map(|n| match n.op {
                            Op::Param(q) if q == p => Some(n.value.shape()),
                            _ => None,
                        })
                        .ok_or_else(|| Error::Usage("unregistered parameter".into()))?;
                    Ok(Tensor::zeros(shape.0, shape.1))
                }
            })
            .collect()
    }

    fn accum(
        &self,
        grads: &mut [Option<Tensor<S>>],
        id: NodeId,
        g: Tensor<S>,
    ) -> Result<()> {
        accumulate_opt(&mut grads[id.0], &g)
    }
}

fn accumulate_opt<S: Real>(slot: &mut Option<Tensor<S>>, g: &Tensor<S>) -> Result<()> {
    match slot {
        Some(t) => t.add_assign(g),
        None => {
            *slot = Some(g.clone());
            Ok(())
        }
    }
}

fn apply_adjacency<S: Real>(h: &Tensor<S>, adj: &[Tensor<S>]) -> Result<Tensor<S>> {
    if adj.is_empty() {
        return Err(Error::Shape("adj_matmul with no adjacency matrices".into()));
    }
    let n = adj[0].rows();
    let (total, width) = h.shape();
    if total != n * adj.len() || adj.iter().any(|a| a.shape() != (n, n)) {
        return Err(Error::Shape(format!(
            "adj_matmul: features {total}x{width}, {} graphs of {n} nodes",
            adj.len()
        )));
    }
    let mut out = Tensor::zeros(total, width);
    let mut terms: Vec<S> = Vec::with_capacity(n);
    for (g, a) in adj.iter().enumerate() {
        for v in 0..n {
            for c in 0..width {
                terms.clear();
                for u in 0..n {
                    let w = a.get(v, u);
                    if w != S::zero() {
                        terms.push(w * h.get(g * n + u, c));
                    }
                }
                out.set(g * n + v, c, canonical_sum(&mut terms));
            }
        }
    }
    Ok(out)
}

pub(crate) fn softplus<S: Real>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient() {
        // loss = w * x with x = 3 => dloss/dw = 3
        let mut g = Graph::new();
        let ids = g.params(&[Tensor::scalar(2.0f64)]);
        let x = g.constant(Tensor::scalar(3.0));
        let loss = g.mul_elem(ids[0], x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[0].get(0, 0), 3.0);
    }

    #[test]
    fn relu_dead_region_gradient_is_zero() {
        let mut g = Graph::new();
        let ids = g.params(&[Tensor::scalar(2.0f64)]);
        let x = g.constant(Tensor::scalar(-3.0));
        let z = g.mul_elem(ids[0], x).unwrap();
        let r = g.relu(z);
        let loss = g.mean_all(r).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[0].get(0, 0), 0.0);
    }

    #[test]
    fn untouched_params_get_zero_gradients() {
        let mut g = Graph::new();
        let ids = g.params(&[Tensor::scalar(1.0f64), Tensor::zeros(2, 2)]);
        let loss = g.mean_all(ids[0]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[1].shape(), (2, 2));
        assert!(grads[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let g = Graph::<f64>::new();
        assert!(matches!(g.backward(NodeId(0)), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::<f64>::zeros(2, 2));
        assert!(matches!(g.backward(c), Err(Error::Usage(_))));
    }

    #[test]
    fn composite_matches_finite_differences() {
        // loss = mean(softplus(tanh(X W + b) * X W2)) on random-ish values.
        fn eval(w: &Tensor<f64>, b: &Tensor<f64>, w2: &Tensor<f64>) -> f64 {
            let x = Tensor::from_fn(3, 2, |i, j| (i as f64 - j as f64) * 0.37 + 0.11);
            let mut g = Graph::new();
            let ids = g.params(&[w.clone(), b.clone(), w2.clone()]);
            let xc = g.constant(x);
            let h = g.matmul(xc, ids[0]).unwrap();
            let h = g.add_row(h, ids[1]).unwrap();
            let h = g.tanh(h);
            let z = g.matmul(xc, ids[2]).unwrap();
            let p = g.mul_elem(h, z).unwrap();
            let p = g.softplus(p);
            let loss = g.mean_all(p).unwrap();
            g.value(loss).get(0, 0)
        }

        let w = Tensor::from_fn(2, 1, |i, _| 0.4 - 0.3 * i as f64);
        let b = Tensor::from_fn(1, 1, |_, _| 0.2);
        let w2 = Tensor::from_fn(2, 1, |i, _| 0.1 + 0.5 * i as f64);

        // Analytic gradients.
        let x = Tensor::from_fn(3, 2, |i, j| (i as f64 - j as f64) * 0.37 + 0.11);
        let mut g = Graph::new();
        let ids = g.params(&[w.clone(), b.clone(), w2.clone()]);
        let xc = g.constant(x);
        let h = g.matmul(xc, ids[0]).unwrap();
        let h = g.add_row(h, ids[1]).unwrap();
        let h = g.tanh(h);
        let z = g.matmul(xc, ids[2]).unwrap();
        let p = g.mul_elem(h, z).unwrap();
        let p = g.softplus(p);
        let loss = g.mean_all(p).unwrap();
        let grads = g.backward(loss).unwrap();

        let h_step = 1e-6;
        let params = [w, b, w2];
        for (pi, base) in params.iter().enumerate() {
            for k in 0..base.len() {
                let mut plus = params.clone();
                plus[pi].data_mut()[k] += h_step;
                let mut minus = params.clone();
                minus[pi].data_mut()[k] -= h_step;
                let fd = (eval(&plus[0], &plus[1], &plus[2])
                    - eval(&minus[0], &minus[1], &minus[2]))
                    / (2.0 * h_step);
                let got = grads[pi].data()[k];
                assert!(
                    (fd - got).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi}[{k}]: fd {fd} vs autodiff {got}"
                );
            }
        }
    }
}
