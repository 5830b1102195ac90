//! Append-only computation graph with reverse-mode differentiation.
//!
//! Nodes are created in topological order, so the backward pass is a single
//! sweep over node indices in reverse. Parameters enter the graph by
//! reference and their gradients land in a [`GradTable`] indexed by
//! parameter id.

use std::borrow::Cow;

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_in_place};
use super::{NumError, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor<T>),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    StackRows(Vec<NodeId>),
    GatherRow(NodeId, usize),
    SoftmaxRows(NodeId),
    Sum(NodeId),
    SumNodes(Vec<NodeId>),
    NllLogits(NodeId, usize),
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
}

/// Gradients for a fixed list of parameters, accumulated additively.
#[derive(Clone, Debug, PartialEq)]
pub struct GradTable<T: Scalar = f32> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> GradTable<T> {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        Self { grads: params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect() }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.grads[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(T::zero());
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<(), NumError> {
        if self.grads.len() != other.grads.len() {
            return Err(NumError::Contract("gradient tables cover different parameter lists".into()));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }

    /// L2 norm over every gradient element.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

/// A computation graph borrowing its parameters for lifetime `'p`.
pub struct Graph<'p, T: Scalar = f32> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.push(Cow::Owned(value), op)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.owned(value, Op::Leaf)
    }

    /// A trainable parameter; its gradient accumulates into slot `id` of the table.
    pub fn param(&mut self, id: usize, value: &'p Tensor<T>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Param(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.owned(v, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.owned(v, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.owned(v, Op::Add(a, b)))
    }

    /// Adds a `1 x cols` bias row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.owned(v, Op::AddRow(a, bias)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.owned(v, Op::Mul(a, b)))
    }

    /// Element-wise product with a constant tensor (used for dropout masks).
    pub fn mul_const(&mut self, a: NodeId, mask: Tensor<T>) -> Result<NodeId, NumError> {
        let v = self.value(a).mul(&mask)?;
        Ok(self.owned(v, Op::MulConst(a, mask)))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).scale(s);
        self.owned(v, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sigmoid();
        self.owned(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).tanh();
        self.owned(v, Op::Tanh(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let v = self.value(a).log()?;
        Ok(self.owned(v, Op::Log(a)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumError> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&values)?;
        Ok(self.owned(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, NumError> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.owned(v, Op::SliceCols(a, start)))
    }

    /// Stacks inputs with equal column counts on top of each other.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumError> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(NumError::Shape { op: "stack_rows", left: (rows, cols), right: t.shape() });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        Ok(self.owned(v, Op::StackRows(parts.to_vec())))
    }

    /// Row `row` of `a` as a `1 x cols` node (embedding lookup).
    pub fn gather_row(&mut self, a: NodeId, row: usize) -> Result<NodeId, NumError> {
        let t = self.value(a);
        if row >= t.rows() {
            return Err(NumError::Contract(format!("row {row} out of range for {}x{}", t.rows(), t.cols())));
        }
        let v = Tensor::row_vector(t.row(row).to_vec());
        Ok(self.owned(v, Op::GatherRow(a, row)))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        self.owned(v, Op::SoftmaxRows(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.owned(v, Op::Sum(a))
    }

    /// Element-wise sum of equally shaped nodes.
    pub fn sum_nodes(&mut self, parts: &[NodeId]) -> Result<NodeId, NumError> {
        let Some(&first) = parts.first() else {
            return Err(NumError::Contract("sum_nodes needs at least one input".into()));
        };
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.value(p))?;
        }
        Ok(self.owned(acc, Op::SumNodes(parts.to_vec())))
    }

    /// Negative log-probability of `target` under `softmax(logits)`; `logits` is `1 x V`.
    pub fn nll_logits(&mut self, logits: NodeId, target: usize) -> Result<NodeId, NumError> {
        let t = self.value(logits);
        if t.rows() != 1 || target >= t.cols() {
            return Err(NumError::Contract(format!(
                "nll target {target} invalid for logits {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        let v = Tensor::scalar(-t.log_softmax_rows().get(0, target));
        Ok(self.owned(v, Op::NllLogits(logits, target)))
    }

    /// Reverse sweep from a scalar `loss`, adding parameter gradients into `table`.
    ///
    /// Calling this twice without resetting the table doubles the gradients.
    pub fn backward(&self, loss: NodeId, table: &mut GradTable<T>) -> Result<(), NumError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let slot = table.grads.get_mut(*id).ok_or_else(|| {
                        NumError::Contract(format!("parameter id {id} missing from gradient table"))
                    })?;
                    slot.add_assign(&g)?;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    matmul_nt_acc(&g, vb, self.slot(&mut grads, *a));
                    matmul_tn_acc(va, &g, self.slot(&mut grads, *b));
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    matmul_acc(&g, vb, self.slot(&mut grads, *a));
                    matmul_tn_acc(&g, va, self.slot(&mut grads, *b));
                }
                Op::Add(a, b) => {
                    self.slot(&mut grads, *a).add_assign(&g)?;
                    self.slot(&mut grads, *b).add_assign(&g)?;
                }
                Op::AddRow(a, bias) => {
                    self.slot(&mut grads, *a).add_assign(&g)?;
                    let gb = self.slot(&mut grads, *bias);
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(*b))?;
                    let db = g.mul(self.value(*a))?;
                    self.slot(&mut grads, *a).add_assign(&da)?;
                    self.slot(&mut grads, *b).add_assign(&db)?;
                }
                Op::MulConst(a, mask) => {
                    let da = g.mul(mask)?;
                    self.slot(&mut grads, *a).add_assign(&da)?;
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    zip_acc(self.slot(&mut grads, *a), &g, &g, |gv, _| gv * s);
                }
                Op::Sigmoid(a) => {
                    zip_acc(self.slot(&mut grads, *a), &g, &node.value, |gv, y| gv * y * (T::one() - y));
                }
                Op::Tanh(a) => {
                    zip_acc(self.slot(&mut grads, *a), &g, &node.value, |gv, y| gv * (T::one() - y * y));
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    zip_acc(self.slot(&mut grads, *a), &g, x, |gv, xv| gv / xv);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let dst = self.slot(&mut grads, p);
                        for r in 0..g.rows() {
                            let src = &g.row(r)[offset..offset + w];
                            for (o, &v) in dst.row_mut(r).iter_mut().zip(src) {
                                *o = *o + v;
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let start = *start;
                    let dst = self.slot(&mut grads, *a);
                    for r in 0..g.rows() {
                        for (o, &v) in dst.row_mut(r)[start..].iter_mut().zip(g.row(r)) {
                            *o = *o + v;
                        }
                    }
                }
                Op::StackRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        let dst = self.slot(&mut grads, p);
                        for r in 0..h {
                            for (o, &v) in dst.row_mut(r).iter_mut().zip(g.row(row + r)) {
                                *o = *o + v;
                            }
                        }
                        row += h;
                    }
                }
                Op::GatherRow(a, row) => {
                    let dst = self.slot(&mut grads, *a);
                    for (o, &v) in dst.row_mut(*row).iter_mut().zip(g.data()) {
                        *o = *o + v;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dst = self.slot(&mut grads, *a);
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let dot = gr.iter().zip(yr).fold(T::zero(), |acc, (&gv, &yv)| acc + gv * yv);
                        for ((o, &gv), &yv) in dst.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = *o + yv * (gv - dot);
                        }
                    }
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    for o in self.slot(&mut grads, *a).data_mut() {
                        *o = *o + gv;
                    }
                }
                Op::SumNodes(parts) => {
                    for &p in parts {
                        self.slot(&mut grads, p).add_assign(&g)?;
                    }
                }
                Op::NllLogits(a, target) => {
                    let gv = g.item();
                    let mut p = self.value(*a).data().to_vec();
                    softmax_in_place(&mut p);
                    p[*target] = p[*target] - T::one();
                    for (o, pv) in self.slot(&mut grads, *a).data_mut().iter_mut().zip(p) {
                        *o = *o + gv * pv;
                    }
                }
            }
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], id: NodeId) -> &'g mut Tensor<T> {
        let (r, c) = self.value(id).shape();
        grads[id.0].get_or_insert_with(|| Tensor::zeros(r, c))
    }
}

fn zip_acc<T: Scalar>(dst: &mut Tensor<T>, g: &Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) {
    for ((o, &gv), &ov) in dst.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *o = *o + f(gv, ov);
    }
}
