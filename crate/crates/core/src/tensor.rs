//! Dense `f64` tensors and a per-pass reverse-mode tape.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Values
//! are computed eagerly on the forward pass; [`Tape::backward`] replays the
//! records in reverse and returns gradients for every leaf that requires one.
//! Parameter leaves borrow their storage, so binding a model onto a fresh tape
//! does not copy weights.
//!
//! Only ranks 0, 1 and 2 are used by the model code, and broadcasting is
//! limited to adding a row vector to every row of a matrix.

use std::borrow::Cow;

use crate::error::{Error, Result};

/// Owned dense tensor with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", format!("zero dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape("accumulate_grad", &self.shape, &[g.len()]));
        }
        let slot = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    MatVecT(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Outer(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    Row(Var, usize),
    Pick(Var, usize),
    Sum(Var),
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass. Discard it after [`Tape::backward`].
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Leaf gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a nonempty slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    x.iter().map(|v| v - lse).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that borrows the tensor's storage. It takes part in
    /// backward only if the tensor is marked `requires_grad`.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        self.push_raw(
            tensor.shape.clone(),
            Cow::Borrowed(&tensor.data),
            Op::Leaf,
            tensor.requires_grad,
        )
    }

    /// Like [`Tape::leaf`] but overrides the tensor's own `requires_grad` flag.
    pub fn leaf_with(&mut self, tensor: &'a Tensor, requires_grad: bool) -> Var {
        self.push_raw(tensor.shape.clone(), Cow::Borrowed(&tensor.data), Op::Leaf, requires_grad)
    }

    pub fn leaf_owned(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad;
        self.push_raw(tensor.shape, Cow::Owned(tensor.data), Op::Leaf, requires_grad)
    }

    /// Records a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("constant", &shape, &[data.len()]));
        }
        Ok(self.push_raw(shape, Cow::Owned(data), Op::Leaf, false))
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = shape.iter().product();
        self.push_raw(shape, Cow::Owned(vec![0.0; n]), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    pub fn to_tensor(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        Tensor {
            shape: node.shape.clone(),
            data: node.value.to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    fn push_raw(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatVec(a, b)
            | Op::MatVecT(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Outer(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Affine(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Slice(a, _)
            | Op::Reshape(a)
            | Op::Row(a, _)
            | Op::Pick(a, _)
            | Op::Sum(a) => self.requires_grad(*a),
            Op::Concat(parts) => parts.iter().any(|p| self.requires_grad(*p)),
        };
        self.push_raw(shape, Cow::Owned(value), op, requires_grad)
    }

    fn matrix_dims(&self, op: &'static str, var: Var) -> Result<(usize, usize)> {
        match self.shape(var) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::invalid(op, format!("expected a matrix, got shape {other:?}"))),
        }
    }

    fn vector_len(&self, op: &'static str, var: Var) -> Result<usize> {
        match self.shape(var) {
            [n] => Ok(*n),
            other => Err(Error::invalid(op, format!("expected a vector, got shape {other:?}"))),
        }
    }

    /// `m · x` for an `r × c` matrix and a length-`c` vector.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("matvec", m)?;
        let n = self.vector_len("matvec", x)?;
        if n != c {
            return Err(Error::shape("matvec", self.shape(m), self.shape(x)));
        }
        let (mv, xv) = (self.value(m), self.value(x));
        let out: Vec<f64> = mv
            .chunks_exact(c)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        debug_assert_eq!(out.len(), r);
        Ok(self.push(vec![r], out, Op::MatVec(m, x)))
    }

    /// `mᵀ · x` for an `r × c` matrix and a length-`r` vector.
    pub fn matvec_t(&mut self, m: Var, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("matvec_t", m)?;
        let n = self.vector_len("matvec_t", x)?;
        if n != r {
            return Err(Error::shape("matvec_t", self.shape(m), self.shape(x)));
        }
        let (mv, xv) = (self.value(m), self.value(x));
        let mut out = vec![0.0; c];
        for (row, &w) in mv.chunks_exact(c).zip(xv) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        Ok(self.push(vec![c], out, Op::MatVecT(m, x)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.matrix_dims("matmul", a)?;
        let (k2, c) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let s = av[i * k + p];
                for (o, v) in orow.iter_mut().zip(&bv[p * c..(p + 1) * c]) {
                    *o += s * v;
                }
            }
        }
        Ok(self.push(vec![r, c], out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: r × k` and `b: c × k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.matrix_dims("matmul_nt", a)?;
        let (c, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * c);
        for arow in av.chunks_exact(k) {
            for brow in bv.chunks_exact(k) {
                out.push(arow.iter().zip(brow).map(|(x, y)| x * y).sum());
            }
        }
        Ok(self.push(vec![r, c], out, Op::MatMulNT(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(self.shape(a).to_vec(), out, rec))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the length-`c` vector `b` to every row of the `r × c` matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("add_row", a)?;
        let n = self.vector_len("add_row", b)?;
        if n != c {
            return Err(Error::shape("add_row", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c) {
            add_into(row, bv);
        }
        Ok(self.push(vec![r, c], out, Op::AddRow(a, b)))
    }

    /// Outer product `a bᵀ` of two vectors.
    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let r = self.vector_len("outer", a)?;
        let c = self.vector_len("outer", b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * c);
        for &x in av {
            out.extend(bv.iter().map(|y| x * y));
        }
        Ok(self.push(vec![r, c], out, Op::Outer(a, b)))
    }

    /// Elementwise `scale · x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let out = self.value(x).iter().map(|v| scale * v + offset).collect();
        self.push(self.shape(x).to_vec(), out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    /// Elementwise `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(self.shape(x).to_vec(), out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vector_len("softmax", x)?;
        if n == 0 {
            return Err(Error::EmptyInput("softmax of an empty vector".into()));
        }
        let out = softmax(self.value(x));
        Ok(self.push(vec![n], out, Op::Softmax(x)))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vector_len("log_softmax", x)?;
        if n == 0 {
            return Err(Error::EmptyInput("log_softmax of an empty vector".into()));
        }
        let out = log_softmax(self.value(x));
        Ok(self.push(vec![n], out, Op::LogSoftmax(x)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            self.vector_len("concat", p)?;
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec())))
    }

    /// Elements `start..end` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let n = self.vector_len("slice", x)?;
        if start >= end || end > n {
            return Err(Error::invalid("slice", format!("range {start}..{end} invalid for length {n}")));
        }
        let out = self.value(x)[start..end].to_vec();
        Ok(self.push(vec![end - start], out, Op::Slice(x, start)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape, out, Op::Reshape(x)))
    }

    /// Row `i` of a matrix; used for embedding lookup and cell access.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("row", m)?;
        if i >= r {
            return Err(Error::InvalidToken { id: i, size: r });
        }
        let out = self.value(m)[i * c..(i + 1) * c].to_vec();
        Ok(self.push(vec![c], out, Op::Row(m, i)))
    }

    /// Element `i` of a vector as a scalar.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        let n = self.vector_len("pick", x)?;
        if i >= n {
            return Err(Error::InvalidToken { id: i, size: n });
        }
        let out = vec![self.value(x)[i]];
        Ok(self.push(Vec::new(), out, Op::Pick(x, i)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = vec![self.value(x).iter().sum()];
        self.push(Vec::new(), out, Op::Sum(x))
    }

    /// Sum of several same-shape tensors, added left to right.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::EmptyInput("add_all of zero parts".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every leaf
    /// with `requires_grad`, each accumulated over all of its uses.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 || !node.shape.iter().all(|&d| d == 1) {
            return Err(Error::NonScalarLoss(node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let len = |v: Var| self.nodes[v.0].value.len();
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let n = len(v);
                grads[v.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatVec(m, x) => {
                let c = self.nodes[m.0].shape[1];
                if wants(*m) {
                    let xv = val(*x);
                    let dm = slot!(*m);
                    for (row, &gi) in dm.chunks_exact_mut(c).zip(g) {
                        for (d, xj) in row.iter_mut().zip(xv) {
                            *d += gi * xj;
                        }
                    }
                }
                if wants(*x) {
                    let mv = val(*m);
                    let dx = slot!(*x);
                    for (row, &gi) in mv.chunks_exact(c).zip(g) {
                        for (d, mij) in dx.iter_mut().zip(row) {
                            *d += gi * mij;
                        }
                    }
                }
            }
            Op::MatVecT(m, x) => {
                let c = self.nodes[m.0].shape[1];
                if wants(*m) {
                    let xv = val(*x);
                    let dm = slot!(*m);
                    for (row, &xi) in dm.chunks_exact_mut(c).zip(xv) {
                        for (d, gj) in row.iter_mut().zip(g) {
                            *d += xi * gj;
                        }
                    }
                }
                if wants(*x) {
                    let mv = val(*m);
                    let dx = slot!(*x);
                    for (d, row) in dx.iter_mut().zip(mv.chunks_exact(c)) {
                        *d += row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (r, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let c = self.nodes[b.0].shape[1];
                if wants(*a) {
                    let bv = val(*b);
                    let da = slot!(*a);
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            da[i * k + p] += grow.iter().zip(&bv[p * c..(p + 1) * c]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let db = slot!(*b);
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let s = av[i * k + p];
                            for (d, gv) in db[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *d += s * gv;
                            }
                        }
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let k = self.nodes[a.0].shape[1];
                let c = self.nodes[b.0].shape[0];
                if wants(*a) {
                    let bv = val(*b);
                    let da = slot!(*a);
                    for (darow, grow) in da.chunks_exact_mut(k).zip(g.chunks_exact(c)) {
                        for (brow, &gij) in bv.chunks_exact(k).zip(grow) {
                            for (d, bjk) in darow.iter_mut().zip(brow) {
                                *d += gij * bjk;
                            }
                        }
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let db = slot!(*b);
                    for (arow, grow) in av.chunks_exact(k).zip(g.chunks_exact(c)) {
                        for (dbrow, &gij) in db.chunks_exact_mut(k).zip(grow) {
                            for (d, aik) in dbrow.iter_mut().zip(arow) {
                                *d += gij * aik;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(slot!(*a), g);
                }
                if wants(*b) {
                    add_into(slot!(*b), g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(slot!(*a), g);
                }
                if wants(*b) {
                    for (d, gv) in slot!(*b).iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    for ((d, gv), y) in slot!(*a).iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    for ((d, gv), x) in slot!(*b).iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if wants(*a) {
                    add_into(slot!(*a), g);
                }
                if wants(*b) {
                    let c = len(*b);
                    let db = slot!(*b);
                    for grow in g.chunks_exact(c) {
                        add_into(db, grow);
                    }
                }
            }
            Op::Outer(a, b) => {
                let c = len(*b);
                if wants(*a) {
                    let bv = val(*b);
                    for (d, grow) in slot!(*a).iter_mut().zip(g.chunks_exact(c)) {
                        *d += grow.iter().zip(bv).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                if wants(*b) {
                    let av = val(*a);
                    let db = slot!(*b);
                    for (grow, &ai) in g.chunks_exact(c).zip(av) {
                        for (d, gv) in db.iter_mut().zip(grow) {
                            *d += ai * gv;
                        }
                    }
                }
            }
            Op::Affine(x, k) => {
                for (d, gv) in slot!(*x).iter_mut().zip(g) {
                    *d += k * gv;
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                for ((d, gv), yv) in slot!(*x).iter_mut().zip(g).zip(y.iter()) {
                    *d += gv * (1.0 - yv * yv);
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                for ((d, gv), yv) in slot!(*x).iter_mut().zip(g).zip(y.iter()) {
                    *d += gv * yv * (1.0 - yv);
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                for ((d, gv), yv) in slot!(*x).iter_mut().zip(g).zip(y.iter()) {
                    *d += yv * (gv - dot);
                }
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let total: f64 = g.iter().sum();
                for ((d, gv), yv) in slot!(*x).iter_mut().zip(g).zip(y.iter()) {
                    *d += gv - yv.exp() * total;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = len(p);
                    if wants(p) {
                        add_into(slot!(p), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Slice(x, start) => {
                let dx = slot!(*x);
                add_into(&mut dx[*start..*start + g.len()], g);
            }
            Op::Reshape(x) => {
                add_into(slot!(*x), g);
            }
            Op::Row(m, i) => {
                let c = g.len();
                let dm = slot!(*m);
                add_into(&mut dm[i * c..(i + 1) * c], g);
            }
            Op::Pick(x, i) => {
                slot!(*x)[*i] += g[0];
            }
            Op::Sum(x) => {
                for d in slot!(*x).iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape<'_>, data: Vec<f64>) -> Var {
        tape.leaf_owned(Tensor::vector(data).unwrap().with_requires_grad(true))
    }

    #[test]
    fn tensor_rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert_eq!(Tensor::zeros(vec![2, 3]).unwrap().len(), 6);
    }

    #[test]
    fn uniform_softmax() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![3], vec![0.0; 3]).unwrap();
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
        let shifted = softmax(&[1.0 + 7.5, 2.0 + 7.5]);
        let base = softmax(&[1.0, 2.0]);
        assert!((shifted[0] - base[0]).abs() < 1e-15);
    }

    #[test]
    fn centered_activations() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1], vec![0.0]).unwrap();
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        assert_eq!(tape.value(s), &[0.5]);
        assert_eq!(tape.value(t), &[0.0]);
    }

    #[test]
    fn identity_matvec() {
        let mut tape = Tape::new();
        let eye = tape
            .constant(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let v = tape.constant(vec![3], vec![0.3, -2.0, 5.5]).unwrap();
        let y = tape.matvec(eye, v).unwrap();
        assert_eq!(tape.value(y), &[0.3, -2.0, 5.5]);
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut tape = Tape::new();
        let m = tape.zeros(vec![2, 3]);
        let v = tape.zeros(vec![2]);
        let err = tape.matvec(m, v).unwrap_err().to_string();
        assert!(err.contains("matvec") && err.contains("[2, 3]") && err.contains("[2]"), "{err}");
        let a = tape.zeros(vec![4]);
        let err = tape.add(a, v).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let v = vec_leaf(&mut tape, vec![1.0, -2.0, 3.0]);
        let loss = tape.sum(v);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(v).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, vec![0.0]);
        let s = tape.sigmoid(x);
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let v = vec_leaf(&mut tape, vec![1.0, 2.0]);
        let y = tape.tanh(v);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn reused_leaf_accumulates() {
        // loss = sum(x * x) -> grad 2x
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, vec![1.5, -0.5]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[3.0, -1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, vec![1.0, 2.0]);
        let c = tape.constant(vec![2], vec![3.0, 4.0]).unwrap();
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn borrowed_leaf_does_not_copy() {
        let t = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap().with_requires_grad(true);
        let mut tape = Tape::new();
        let m = tape.leaf(&t);
        assert_eq!(tape.value(m).as_ptr(), t.data().as_ptr());
    }

    #[test]
    fn accumulate_grad_checks_length() {
        let mut t = Tensor::vector(vec![0.0; 3]).unwrap();
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0, 6.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
