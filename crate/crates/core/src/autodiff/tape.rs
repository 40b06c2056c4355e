use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw};
use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    Exp(usize),
    Ln1p(usize),
    Relu(usize),
    LnClamped(usize, f64),
    SoftmaxRows(usize),
    MaskedSoftmax(usize),
    Reduce {
        x: usize,
        kind: ReduceKind,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumAll(usize),
    ConcatCols(Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Exp(..) => "exp",
            Op::Ln1p(..) => "ln1p",
            Op::Relu(..) => "relu",
            Op::LnClamped(..) => "ln_clamped",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::Reduce { .. } => "reduce",
            Op::SumAll(..) => "sum_all",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so every input id is smaller
/// than the id of the node consuming it. `backward` sweeps ids downward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `v` when nothing flowed into it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_or_scalar(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() || a.is_scalar() || b.is_scalar()
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
    } else if b.is_scalar() {
        let y = b.item();
        a.map(|x| f(x, y))
    } else {
        let x = a.item();
        b.map(|y| f(x, y))
    }
}

/// Folds a gradient computed at the broadcast shape back onto an operand.
fn unbroadcast(grad: Tensor, operand: &Tensor) -> Tensor {
    if operand.shape() == grad.shape() {
        grad
    } else {
        Tensor::scalar(grad.data().iter().sum())
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(), TensorError> {
    if t.rank() != 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Trainable input: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        require_matrix("matmul", av)?;
        require_matrix("matmul", bv)?;
        if av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let out = Tensor::matrix(m, n, matmul_raw(av.data(), bv.data(), m, k, n))?;
        let rg = self.rg(&[a.0, b.0]);
        self.push(Op::MatMul(a.0, b.0), out, rg)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        require_matrix("matmul_nt", av)?;
        require_matrix("matmul_nt", bv)?;
        if av.cols() != bv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let out = Tensor::matrix(m, n, matmul_nt_raw(av.data(), bv.data(), m, k, n))?;
        let rg = self.rg(&[a.0, b.0]);
        self.push(Op::MatMulNt(a.0, b.0), out, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        require_matrix("transpose", av)?;
        let out = av.transpose();
        let rg = self.rg(&[a.0]);
        self.push(Op::Transpose(a.0), out, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if !same_or_scalar(av, bv) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let out = broadcast_binary(av, bv, f);
        let rg = self.rg(&[a.0, b.0]);
        self.push(op, out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(&[a.0]);
        self.push(Op::Scale(a.0, factor), out, rg)
    }

    /// Adds a length-`c` bias vector to every row of an `r × c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        require_matrix("add_bias", xv)?;
        if bv.shape() != [xv.cols()] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x.0, bias.0]);
        self.push(Op::AddBias(x.0, bias.0), out, rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a.0]);
        self.push(Op::Exp(a.0), out, rg)
    }

    pub fn ln1p(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::ln_1p);
        let rg = self.rg(&[a.0]);
        self.push(Op::Ln1p(a.0), out, rg)
    }

    /// Rectifier with subgradient 0 at the origin.
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a.0]);
        self.push(Op::Relu(a.0), out, rg)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x.max(floor).ln());
        let rg = self.rg(&[a.0]);
        self.push(Op::LnClamped(a.0, floor), out, rg)
    }

    /// Row-wise softmax of a matrix with max-shift.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        require_matrix("softmax_rows", av)?;
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(Op::SoftmaxRows(a.0), out, rg)
    }

    /// Row-wise softmax restricted to entries where `allowed` is true.
    ///
    /// Disallowed entries get weight exactly 0. A row with no allowed entry
    /// is all zeros. `allowed` is row-major with the same extent as `a`.
    pub fn masked_softmax(&mut self, a: Var, allowed: &[bool]) -> Result<Var, TensorError> {
        let av = self.value(a);
        require_matrix("masked_softmax", av)?;
        if allowed.len() != av.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: av.shape().to_vec(),
                right: vec![allowed.len()],
            });
        }
        let cols = av.cols();
        let mut out = Tensor::zeros(av.shape());
        for r in 0..av.rows() {
            let scores = av.row(r);
            let mask = &allowed[r * cols..(r + 1) * cols];
            let max = scores
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&s, _)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let row = out.row_mut(r);
            let mut total = 0.0;
            for ((o, &s), &m) in row.iter_mut().zip(scores).zip(mask) {
                if m {
                    *o = (s - max).exp();
                    total += *o;
                }
            }
            for o in row.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(Op::MaskedSoftmax(a.0), out, rg)
    }

    /// Reduction along one axis; the axis is removed from the shape.
    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axis: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange { axis, shape });
        }
        let extent = shape[axis];
        if extent == 0 {
            return Err(TensorError::EmptyReduction { axis, shape });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == ReduceKind::Max {
            argmax = vec![0; outer * inner];
        }
        let data = xv.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| data[(o * extent + j) * inner + i];
                let slot = o * inner + i;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s: f64 = (0..extent).map(at).sum();
                        out[slot] = if kind == ReduceKind::Mean { s / extent as f64 } else { s };
                    }
                    ReduceKind::Max => {
                        let mut best = 0;
                        for j in 1..extent {
                            if at(j) > at(best) {
                                best = j;
                            }
                        }
                        out[slot] = at(best);
                        argmax[slot] = best;
                    }
                }
            }
        }
        let out = Tensor::new(out_shape, out)?;
        let rg = self.rg(&[x.0]);
        self.push(
            Op::Reduce {
                x: x.0,
                kind,
                axis,
                argmax,
            },
            out,
            rg,
        )
    }

    /// Sum of all entries, as a rank-0 tensor. An empty input sums to 0.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(&[x.0]);
        self.push(Op::SumAll(x.0), Tensor::scalar(s), rg)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let rows = self.value(*first).shape().first().copied().unwrap_or(0);
        let mut total_cols = 0;
        for &p in parts {
            let pv = self.value(p);
            require_matrix("concat_cols", pv)?;
            if pv.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape().to_vec(),
                    right: pv.shape().to_vec(),
                });
            }
            total_cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total_cols, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        self.push(Op::ConcatCols(ids), out, rg)
    }

    /// Sign pattern of every rectifier input on the tape, in tape order.
    ///
    /// Two evaluations with equal patterns are on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                pattern.extend(self.nodes[x].value.data().iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients, TensorError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(TensorError::NonScalarOutput {
                shape: out.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut grads[id] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let da = matmul_nt_raw(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.wants(*b) {
                    let db = matmul_tn_raw(av.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).expect("shape"));
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.wants(*a) {
                    let da = matmul_raw(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).expect("shape"));
                }
                if self.wants(*b) {
                    let db = matmul_tn_raw(g.data(), av.data(), m, n, k);
                    self.accumulate(grads, *b, Tensor::matrix(n, k, db).expect("shape"));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                if self.wants(*a) {
                    let ga = unbroadcast(g.clone(), &self.nodes[*a].value);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = unbroadcast(g.clone(), &self.nodes[*b].value);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    let ga = unbroadcast(g.clone(), &self.nodes[*a].value);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = unbroadcast(g.map(|v| -v), &self.nodes[*b].value);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.wants(*a) {
                    let ga = broadcast_binary(g, bv, |x, y| x * y);
                    self.accumulate(grads, *a, unbroadcast(ga, av));
                }
                if self.wants(*b) {
                    let gb = broadcast_binary(g, av, |x, y| x * y);
                    self.accumulate(grads, *b, unbroadcast(gb, bv));
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accumulate(grads, *a, g.map(|v| v * f));
            }
            Op::AddBias(x, bias) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.wants(*bias) {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (d, v) in db.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::vector(db));
                }
            }
            Op::Exp(a) => {
                let ga = broadcast_binary(g, &node.value, |x, y| x * y);
                self.accumulate(grads, *a, ga);
            }
            Op::Ln1p(a) => {
                let ga = broadcast_binary(g, &self.nodes[*a].value, |gv, x| gv / (1.0 + x));
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = broadcast_binary(g, &self.nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::LnClamped(a, floor) => {
                let floor = *floor;
                let ga = broadcast_binary(g, &self.nodes[*a].value, |gv, x| if x > floor { gv / x } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) | Op::MaskedSoftmax(a) => {
                // dS = W ⊙ (dW − rowsum(dW ⊙ W)); masked entries have W = 0.
                let w = &node.value;
                let mut ds = Tensor::zeros(w.shape());
                for r in 0..w.rows() {
                    let (wr, gr) = (w.row(r), g.row(r));
                    let dot: f64 = wr.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for ((d, &wv), &gv) in ds.row_mut(r).iter_mut().zip(wr).zip(gr) {
                        *d = wv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, ds);
            }
            Op::Reduce {
                x,
                kind,
                axis,
                argmax,
            } => {
                let shape = self.nodes[*x].value.shape();
                let extent = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut dx = Tensor::zeros(shape);
                let d = dx.data_mut();
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        let gv = g.data()[slot];
                        match kind {
                            ReduceKind::Sum => {
                                for j in 0..extent {
                                    d[(o * extent + j) * inner + i] = gv;
                                }
                            }
                            ReduceKind::Mean => {
                                for j in 0..extent {
                                    d[(o * extent + j) * inner + i] = gv / extent as f64;
                                }
                            }
                            ReduceKind::Max => {
                                d[(o * extent + argmax[slot]) * inner + i] = gv;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let shape = self.nodes[*x].value.shape();
                self.accumulate(grads, *x, Tensor::full(shape, g.item()));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let cols = self.nodes[p].value.cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(rows, cols, dp).expect("shape"));
                    }
                    offset += cols;
                }
            }
        }
    }
}
