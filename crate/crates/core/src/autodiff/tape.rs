use crate::autodiff::params::{Gradients, ParamId, ParamSet};
use crate::linalg::{matvec_into, sigmoid_scalar, softmax_slice};
use crate::scalar::Scalar;

/// Index of a recorded value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(super) usize);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AutodiffError {
    #[error("loss node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("loss node must be a scalar, found length {0}")]
    NotScalar(usize),
}

/// Deliberate corruption of one backward rule. Only used to prove that the
/// gradient checker catches a broken derivative.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the sigmoid derivative by 1.01.
    SigmoidBackward,
}

#[derive(Debug, Clone)]
pub(super) enum Op<T> {
    Const,
    Param(ParamId),
    Row(ParamId, usize),
    MatVec(ParamId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    OneMinus(NodeId),
    Scale(NodeId, T),
    MulConst(NodeId, Vec<T>),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    /// Value is a sampled mask; the incoming gradient is passed to the
    /// probability node unchanged.
    StraightThrough(NodeId),
    SoftmaxNll(NodeId, usize),
}

#[derive(Debug, Clone)]
pub(super) struct Node<T> {
    pub(super) value: Vec<T>,
    pub(super) op: Op<T>,
}

/// Records vector-level operations during a forward pass and replays them
/// in reverse to accumulate parameter gradients.
///
/// The tape borrows the parameter values for the duration of the forward
/// pass; [`Tape::backward`] consumes it.
pub struct Tape<'p, T> {
    pub(super) params: &'p ParamSet<T>,
    pub(super) nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn check_same_len(&self, a: NodeId, b: NodeId, op: &str) {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        assert_eq!(la, lb, "{op}: operand lengths differ ({la} vs {lb})");
    }

    pub fn constant(&mut self, value: Vec<T>) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.constant(vec![T::zero(); len])
    }

    /// The whole parameter, flattened row-major.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.params.value(id).as_slice().to_vec();
        self.push(value, Op::Param(id))
    }

    /// One row of a matrix parameter (an embedding lookup).
    pub fn row(&mut self, id: ParamId, r: usize) -> NodeId {
        let value = self.params.value(id).row(r).to_vec();
        self.push(value, Op::Row(id, r))
    }

    pub fn matvec(&mut self, w: ParamId, x: NodeId) -> NodeId {
        let m = self.params.value(w);
        let xv = self.value(x);
        assert_eq!(
            m.cols(),
            xv.len(),
            "matvec: {} has {} columns, input has length {}",
            self.params.name(w),
            m.cols(),
            xv.len()
        );
        let mut out = vec![T::zero(); m.rows()];
        matvec_into(m.as_slice(), xv, &mut out);
        self.push(out, Op::MatVec(w, x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_len(a, b, "add");
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_len(a, b, "sub");
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_len(a, b, "mul");
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Elementwise sum of one or more equal-length nodes.
    pub fn sum(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "sum of no nodes");
        if xs.len() == 1 {
            return xs[0];
        }
        let mut v = self.value(xs[0]).to_vec();
        for &x in &xs[1..] {
            self.check_same_len(xs[0], x, "sum");
            for (a, &b) in v.iter_mut().zip(self.value(x)) {
                *a += b;
            }
        }
        self.push(v, Op::Sum(xs.to_vec()))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&x| sigmoid_scalar(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&x| T::one() - x).collect();
        self.push(v, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        let v = self.value(a).iter().map(|&x| x * k).collect();
        self.push(v, Op::Scale(a, k))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: NodeId, c: Vec<T>) -> NodeId {
        assert_eq!(self.value(a).len(), c.len(), "mul_const: length mismatch");
        let v = zip(self.value(a), &c, |x, y| x * y);
        self.push(v, Op::MulConst(a, c))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let mut v = Vec::with_capacity(xs.iter().map(|&x| self.value(x).len()).sum());
        for &x in xs {
            v.extend_from_slice(self.value(x));
        }
        self.push(v, Op::Concat(xs.to_vec()))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a)[start..start + len].to_vec();
        self.push(v, Op::Slice(a, start))
    }

    /// Forward value `mask`, backward identity into `p`.
    pub fn straight_through(&mut self, p: NodeId, mask: Vec<T>) -> NodeId {
        assert_eq!(self.value(p).len(), mask.len(), "straight_through: length mismatch");
        self.push(mask, Op::StraightThrough(p))
    }

    /// `-ln softmax(logits)[gold]` as a scalar node, computed from
    /// max-shifted logits.
    pub fn softmax_nll(&mut self, logits: NodeId, gold: usize) -> NodeId {
        let z = self.value(logits);
        assert!(gold < z.len(), "gold id {gold} out of range {}", z.len());
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = z.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        let v = vec![lse - z[gold]];
        self.push(v, Op::SoftmaxNll(logits, gold))
    }

    /// Reverse sweep from a scalar `loss`, returning fresh gradients.
    pub fn backward(self, loss: NodeId) -> Result<Gradients<T>, AutodiffError> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Reverse sweep from a scalar `loss`, adding into `grads`.
    pub fn backward_into(
        self,
        loss: NodeId,
        grads: &mut Gradients<T>,
    ) -> Result<(), AutodiffError> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or(AutodiffError::UnknownNode(loss.0))?;
        if node.value.len() != 1 {
            return Err(AutodiffError::NotScalar(node.value.len()));
        }

        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(p) => {
                    for (a, &b) in grads.get_mut(*p).iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Row(p, r) => {
                    let cols = self.params.value(*p).cols();
                    let dst = &mut grads.get_mut(*p)[r * cols..(r + 1) * cols];
                    for (a, &b) in dst.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec(w, x) => {
                    let m = self.params.value(*w);
                    let cols = m.cols();
                    let xv = &self.nodes[x.0].value;
                    let gw = grads.get_mut(*w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        for (a, &xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *a += gr * xc;
                        }
                    }
                    let gx = accum(&mut adj, *x, cols);
                    for (r, row) in m.as_slice().chunks_exact(cols.max(1)).enumerate() {
                        let gr = g[r];
                        if gr == T::zero() {
                            continue;
                        }
                        for (a, &wv) in gx.iter_mut().zip(row) {
                            *a += gr * wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g);
                    add_into(accum(&mut adj, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g);
                    for (d, &s) in accum(&mut adj, *b, g.len()).iter_mut().zip(&g) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for ((d, &s), &o) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(bv) {
                        *d += s * o;
                    }
                    for ((d, &s), &o) in accum(&mut adj, *b, g.len()).iter_mut().zip(&g).zip(av) {
                        *d += s * o;
                    }
                }
                Op::Sum(xs) => {
                    for x in xs {
                        add_into(accum(&mut adj, *x, g.len()), &g);
                    }
                }
                Op::Sigmoid(a) => {
                    let bump = match self.fault {
                        Some(Fault::SigmoidBackward) => T::lit(1.01),
                        None => T::one(),
                    };
                    let y = &node.value;
                    for ((d, &s), &yv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *d += s * yv * (T::one() - yv) * bump;
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    for ((d, &s), &yv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *d += s * (T::one() - yv * yv);
                    }
                }
                Op::OneMinus(a) => {
                    for (d, &s) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *d -= s;
                    }
                }
                Op::Scale(a, k) => {
                    for (d, &s) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g) {
                        *d += s * *k;
                    }
                }
                Op::MulConst(a, c) => {
                    for ((d, &s), &cv) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(c) {
                        *d += s * cv;
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for x in xs {
                        let len = self.nodes[x.0].value.len();
                        add_into(accum(&mut adj, *x, len), &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Slice(a, start) => {
                    let len = self.nodes[a.0].value.len();
                    let d = accum(&mut adj, *a, len);
                    add_into(&mut d[*start..*start + g.len()], &g);
                }
                Op::StraightThrough(p) => {
                    add_into(accum(&mut adj, *p, g.len()), &g);
                }
                Op::SoftmaxNll(z, gold) => {
                    let zv = &self.nodes[z.0].value;
                    let probs = softmax_slice(zv);
                    let d = accum(&mut adj, *z, zv.len());
                    for (k, (dk, pk)) in d.iter_mut().zip(probs).enumerate() {
                        let target = if k == *gold { T::one() } else { T::zero() };
                        *dk += g[0] * (pk - target);
                    }
                }
            }
        }
        Ok(())
    }
}

fn zip<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accum<T: Scalar>(adj: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut [T] {
    adj[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Convenience: scalar dot product of two nodes, `Σ a_i b_i`.
pub fn dot_nodes<T: Scalar>(tape: &mut Tape<'_, T>, a: NodeId, b: NodeId) -> NodeId {
    let prod = tape.mul(a, b);
    let len = tape.value(prod).len();
    let parts: Vec<NodeId> = (0..len).map(|i| tape.slice(prod, i, 1)).collect();
    tape.sum(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn params_with_vector(v: &[f64]) -> (ParamSet<f64>, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap());
        (ps, id)
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let (ps, _) = params_with_vector(&[1.0, 2.0]);
        let mut tape = Tape::new(&ps);
        let c = tape.constant(vec![3.0]);
        let g = tape.backward(c).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_loss_grad_is_input() {
        let (ps, w) = params_with_vector(&[0.3, -1.2, 2.0]);
        let mut tape = Tape::new(&ps);
        let wn = tape.param(w);
        let x = tape.constant(vec![4.0, 5.0, 6.0]);
        let loss = dot_nodes(&mut tape, wn, x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn matvec_grads() {
        let mut ps = ParamSet::new();
        let w = ps.add("W", Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let mut tape = Tape::new(&ps);
        let x = tape.constant(vec![1.0, 1.0]);
        let y = tape.matvec(w, x);
        assert_eq!(tape.value(y), &[3.0, 7.0]);
        let ones = tape.constant(vec![1.0, 1.0]);
        let loss = dot_nodes(&mut tape, y, ones);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn multi_use_node_accumulates() {
        let (ps, w) = params_with_vector(&[3.0]);
        let mut tape = Tape::new(&ps);
        let a = tape.param(w);
        let sq = tape.mul(a, a);
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.get(w), &[6.0]);
    }

    #[test]
    fn backward_rejects_vector_loss() {
        let (ps, w) = params_with_vector(&[1.0, 2.0]);
        let mut tape = Tape::new(&ps);
        let a = tape.param(w);
        assert_eq!(tape.backward(a), Err(AutodiffError::NotScalar(2)));
    }

    #[test]
    fn softmax_nll_grad_is_p_minus_onehot() {
        let (ps, w) = params_with_vector(&[0.5, -0.5, 1.5]);
        let mut tape = Tape::new(&ps);
        let z = tape.param(w);
        let loss = tape.softmax_nll(z, 2);
        let p = softmax_slice::<f64>(&[0.5, -0.5, 1.5]);
        assert!((tape.scalar(loss) + p[2].ln()).abs() < 1e-14);
        let g = tape.backward(loss).unwrap();
        for k in 0..3 {
            let t = if k == 2 { 1.0 } else { 0.0 };
            assert!((g.get(w)[k] - (p[k] - t)).abs() < 1e-15);
        }
    }

    #[test]
    fn straight_through_passes_gradient_to_probability() {
        let (ps, w) = params_with_vector(&[0.2, -0.4]);
        let mut tape = Tape::new(&ps);
        let z = tape.param(w);
        let p = tape.sigmoid(z);
        let g = tape.straight_through(p, vec![1.0, 0.0]);
        assert_eq!(tape.value(g), &[1.0, 0.0]);
        let x = tape.constant(vec![2.0, 3.0]);
        let loss = dot_nodes(&mut tape, g, x);
        let grads = tape.backward(loss).unwrap();
        for (k, (&zk, xk)) in [0.2f64, -0.4].iter().zip([2.0, 3.0]).enumerate() {
            let s = sigmoid_scalar(zk);
            assert!((grads.get(w)[k] - xk * s * (1.0 - s)).abs() < 1e-15);
        }
    }
}
