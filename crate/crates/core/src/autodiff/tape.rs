use std::cell::RefCell;

use super::{AutodiffError, Tensor};
use crate::linalg::{self, Cholesky};

/// Operation kinds understood by [`Tape::record`].
///
/// Binary elementwise kinds accept identical shapes or a single-element
/// operand, which is broadcast. `MatMul`, `SumAxis`, `Concat`, `Slice`,
/// `Transpose` and `SpdSolve` operate on rank-2 tensors.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Exp,
    Ln,
    Square,
    Sqrt,
    Tanh,
    Relu,
    Softplus,
    Sigmoid,
    Neg,
    /// `scale * x + shift`
    Affine { scale: f64, shift: f64 },
    Sum,
    Mean,
    /// Sum along an axis, keeping it with extent 1.
    SumAxis(usize),
    /// Broadcast to the given shape; source dims must equal the target or be 1.
    Broadcast(Vec<usize>),
    Concat(usize),
    Slice { axis: usize, start: usize, len: usize },
    Transpose,
    /// `(K + jitter·I)⁻¹ B` for symmetric positive definite `K`, through a
    /// Cholesky factor. Inputs are `[K, B]`.
    SpdSolve { jitter: f64 },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Softplus => "softplus",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Neg => "neg",
            OpKind::Affine { .. } => "affine",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumAxis(_) => "sum_axis",
            OpKind::Broadcast(_) => "broadcast",
            OpKind::Concat(_) => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Transpose => "transpose",
            OpKind::SpdSolve { .. } => "spd_solve",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul | OpKind::SpdSolve { .. } => {
                Some(2)
            }
            OpKind::Concat(_) => None,
            _ => Some(1),
        }
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    kind: Option<OpKind>,
    inputs: Vec<usize>,
    needs_grad: bool,
    factor: Option<Cholesky>,
}

/// Define-by-run record of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// operations that consume them.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. It receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push(Node {
            shape: tensor.shape().to_vec(),
            value: tensor.data().to_vec(),
            kind: None,
            inputs: Vec::new(),
            needs_grad: tensor.requires_grad(),
            factor: None,
        })
    }

    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        let (shape, value) = tensor.into_parts();
        self.push(Node {
            shape,
            value,
            kind: None,
            inputs: Vec::new(),
            needs_grad: false,
            factor: None,
        })
    }

    pub fn scalar(&self, value: f64) -> Result<Var<'_>, AutodiffError> {
        Ok(self.constant(Tensor::scalar(value)?))
    }

    pub fn matrix(&self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var<'_>, AutodiffError> {
        Ok(self.constant(Tensor::matrix(rows, cols, data)?))
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn owns(&self, var: &Var<'_>) -> bool {
        std::ptr::eq(self, var.tape)
    }

    /// Evaluates `kind` on `inputs` and records it for the backward pass.
    pub fn record<'t>(&'t self, kind: OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        if inputs.iter().any(|v| !self.owns(v)) {
            return Err(AutodiffError::ForeignVar);
        }
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(AutodiffError::Arity {
                    op: kind.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(AutodiffError::Arity {
                op: kind.name(),
                expected: 1,
                got: 0,
            });
        }
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let (shape, value, factor, needs_grad) = {
            let nodes = self.nodes.borrow();
            let ins: Vec<&Node> = ids.iter().map(|&i| &nodes[i]).collect();
            let (shape, value, factor) = forward(&kind, &ins)?;
            (shape, value, factor, ins.iter().any(|n| n.needs_grad))
        };
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: kind.name() });
        }
        Ok(self.push(Node {
            shape,
            value,
            kind: Some(kind),
            inputs: ids,
            needs_grad,
            factor,
        }))
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, AutodiffError> {
        self.record(OpKind::Concat(axis), parts)
    }

    /// `(K + jitter·I)⁻¹ B`; the jitter doubles on factorization failure.
    pub fn spd_solve<'t>(&'t self, k: Var<'t>, b: Var<'t>, jitter: f64) -> Result<Var<'t>, AutodiffError> {
        self.record(OpKind::SpdSolve { jitter }, &[k, b])
    }

    /// Reverse sweep from a single-element output. Each recorded operation
    /// between the output and the start of the tape is visited once, in
    /// reverse order; contributions from several paths add up.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AutodiffError> {
        if !self.owns(&output) {
            return Err(AutodiffError::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(AutodiffError::NotScalar(out.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.id + 1];
        grads[output.id] = Some(vec![1.0]);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(kind) = &node.kind {
                if node.needs_grad {
                    let contribs = backward_rule(kind, node, &nodes, &g);
                    for (&input, contrib) in node.inputs.iter().zip(contribs) {
                        let Some(c) = contrib else { continue };
                        match &mut grads[input] {
                            Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(c),
                        }
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.with_value(|v| v[0])
    }

    pub fn to_tensor(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite")
    }

    /// `(rows, cols)` of a rank-2 value.
    pub fn dims(&self) -> (usize, usize) {
        let s = self.shape();
        match s.as_slice() {
            [r, c] => (*r, *c),
            _ => panic!("dims() on rank-{} tensor", s.len()),
        }
    }

    fn unary(self, kind: OpKind) -> Result<Var<'t>, AutodiffError> {
        self.tape.record(kind, &[self])
    }

    fn binary(self, kind: OpKind, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.tape.record(kind, &[self, rhs])
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(OpKind::Add, rhs)
    }
    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(OpKind::Sub, rhs)
    }
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(OpKind::Mul, rhs)
    }
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(OpKind::MatMul, rhs)
    }
    pub fn exp(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Exp)
    }
    pub fn ln(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Ln)
    }
    pub fn square(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Square)
    }
    pub fn sqrt(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Sqrt)
    }
    pub fn tanh(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Tanh)
    }
    pub fn relu(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Relu)
    }
    pub fn softplus(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Softplus)
    }
    pub fn sigmoid(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Sigmoid)
    }
    pub fn neg(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Neg)
    }
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Affine { scale, shift })
    }
    pub fn scale(self, scale: f64) -> Result<Var<'t>, AutodiffError> {
        self.affine(scale, 0.0)
    }
    pub fn sum(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Sum)
    }
    pub fn mean(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Mean)
    }
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::SumAxis(axis))
    }
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Broadcast(shape.to_vec()))
    }
    pub fn transpose(self) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Transpose)
    }
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>, AutodiffError> {
        self.unary(OpKind::Slice { axis, start, len })
    }
    /// Rows `start..start+len` of a matrix.
    pub fn rows(self, start: usize, len: usize) -> Result<Var<'t>, AutodiffError> {
        self.slice(0, start, len)
    }
    /// Columns `start..start+len` of a matrix.
    pub fn cols(self, start: usize, len: usize) -> Result<Var<'t>, AutodiffError> {
        self.slice(1, start, len)
    }
}

type Forward = (Vec<usize>, Vec<f64>, Option<Cholesky>);

fn mismatch(op: &OpKind, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn rank2(op: &OpKind, shape: &[usize]) -> Result<(usize, usize), AutodiffError> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(AutodiffError::Rank {
            op: op.name(),
            shape: shape.to_vec(),
        }),
    }
}

fn elementwise_binary(
    kind: &OpKind,
    a: &Node,
    b: &Node,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Forward, AutodiffError> {
    let (na, nb) = (a.value.len(), b.value.len());
    if a.shape == b.shape {
        let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
        Ok((a.shape.clone(), v, None))
    } else if nb == 1 {
        let y = b.value[0];
        Ok((a.shape.clone(), a.value.iter().map(|&x| f(x, y)).collect(), None))
    } else if na == 1 {
        let x = a.value[0];
        Ok((b.shape.clone(), b.value.iter().map(|&y| f(x, y)).collect(), None))
    } else {
        Err(mismatch(kind, &a.shape, &b.shape))
    }
}

fn map(a: &Node, f: impl Fn(f64) -> f64) -> Forward {
    (a.shape.clone(), a.value.iter().map(|&x| f(x)).collect(), None)
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

/// For each element of `to`, the flat index it reads from in `from`.
fn broadcast_index(from: &[usize], to: &[usize]) -> Option<Vec<usize>> {
    let total: usize = to.iter().product();
    if from.iter().product::<usize>() == 1 {
        return Some(vec![0; total]);
    }
    if from.len() != to.len() || from.iter().zip(to).any(|(&f, &t)| f != t && f != 1) {
        return None;
    }
    let rank = to.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if from[d] == 1 { 0 } else { acc };
        acc *= from[d];
    }
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        out.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < to[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(out)
}

fn forward(kind: &OpKind, ins: &[&Node]) -> Result<Forward, AutodiffError> {
    let a = ins[0];
    match kind {
        OpKind::Add => elementwise_binary(kind, a, ins[1], |x, y| x + y),
        OpKind::Sub => elementwise_binary(kind, a, ins[1], |x, y| x - y),
        OpKind::Mul => elementwise_binary(kind, a, ins[1], |x, y| x * y),
        OpKind::MatMul => {
            let b = ins[1];
            let (m, k) = rank2(kind, &a.shape)?;
            let (k2, n) = rank2(kind, &b.shape)?;
            if k != k2 {
                return Err(mismatch(kind, &a.shape, &b.shape));
            }
            Ok((vec![m, n], linalg::matmul(&a.value, &b.value, m, k, n), None))
        }
        OpKind::Exp => Ok(map(a, f64::exp)),
        OpKind::Ln => Ok(map(a, f64::ln)),
        OpKind::Square => Ok(map(a, |x| x * x)),
        OpKind::Sqrt => Ok(map(a, f64::sqrt)),
        OpKind::Tanh => Ok(map(a, f64::tanh)),
        OpKind::Relu => Ok(map(a, |x| x.max(0.0))),
        OpKind::Softplus => Ok(map(a, softplus)),
        OpKind::Sigmoid => Ok(map(a, sigmoid)),
        OpKind::Neg => Ok(map(a, |x| -x)),
        OpKind::Affine { scale, shift } => Ok(map(a, |x| scale * x + shift)),
        OpKind::Sum => Ok((Vec::new(), vec![a.value.iter().sum()], None)),
        OpKind::Mean => Ok((
            Vec::new(),
            vec![a.value.iter().sum::<f64>() / a.value.len() as f64],
            None,
        )),
        OpKind::SumAxis(axis) => {
            let (r, c) = rank2(kind, &a.shape)?;
            match axis {
                0 => {
                    let mut out = vec![0.0; c];
                    for row in a.value.chunks(c) {
                        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                    Ok((vec![1, c], out, None))
                }
                1 => Ok((vec![r, 1], a.value.chunks(c).map(|row| row.iter().sum()).collect(), None)),
                _ => Err(AutodiffError::InvalidAxis {
                    op: kind.name(),
                    axis: *axis,
                }),
            }
        }
        OpKind::Broadcast(to) => {
            let idx = broadcast_index(&a.shape, to).ok_or_else(|| mismatch(kind, &a.shape, to))?;
            Ok((to.clone(), idx.iter().map(|&i| a.value[i]).collect(), None))
        }
        OpKind::Concat(axis) => {
            let dims: Vec<(usize, usize)> = ins
                .iter()
                .map(|n| rank2(kind, &n.shape))
                .collect::<Result<_, _>>()?;
            match axis {
                0 => {
                    let c = dims[0].1;
                    if let Some(bad) = ins.iter().find(|n| n.shape[1] != c) {
                        return Err(mismatch(kind, &a.shape, &bad.shape));
                    }
                    let rows = dims.iter().map(|d| d.0).sum();
                    let value = ins.iter().flat_map(|n| n.value.iter().copied()).collect();
                    Ok((vec![rows, c], value, None))
                }
                1 => {
                    let r = dims[0].0;
                    if let Some(bad) = ins.iter().find(|n| n.shape[0] != r) {
                        return Err(mismatch(kind, &a.shape, &bad.shape));
                    }
                    let cols: usize = dims.iter().map(|d| d.1).sum();
                    let mut value = Vec::with_capacity(r * cols);
                    for i in 0..r {
                        for (n, &(_, c)) in ins.iter().zip(&dims) {
                            value.extend_from_slice(&n.value[i * c..(i + 1) * c]);
                        }
                    }
                    Ok((vec![r, cols], value, None))
                }
                _ => Err(AutodiffError::InvalidAxis {
                    op: kind.name(),
                    axis: *axis,
                }),
            }
        }
        OpKind::Slice { axis, start, len } => {
            let (r, c) = rank2(kind, &a.shape)?;
            let extent = match axis {
                0 => r,
                1 => c,
                _ => {
                    return Err(AutodiffError::InvalidAxis {
                        op: kind.name(),
                        axis: *axis,
                    })
                }
            };
            if *len == 0 || start + len > extent {
                return Err(AutodiffError::SliceBounds {
                    start: *start,
                    len: *len,
                    extent,
                });
            }
            if *axis == 0 {
                Ok((vec![*len, c], a.value[start * c..(start + len) * c].to_vec(), None))
            } else {
                let value = a
                    .value
                    .chunks(c)
                    .flat_map(|row| row[*start..start + len].iter().copied())
                    .collect();
                Ok((vec![r, *len], value, None))
            }
        }
        OpKind::Transpose => {
            let (r, c) = rank2(kind, &a.shape)?;
            Ok((vec![c, r], linalg::transpose(&a.value, r, c), None))
        }
        OpKind::SpdSolve { jitter } => {
            let b = ins[1];
            let (n, n2) = rank2(kind, &a.shape)?;
            let (nb, m) = rank2(kind, &b.shape)?;
            if n != n2 || nb != n {
                return Err(mismatch(kind, &a.shape, &b.shape));
            }
            let factor = Cholesky::with_jitter(&a.value, n, *jitter)?;
            let x = factor.solve(&b.value, m);
            Ok((vec![n, m], x, Some(factor)))
        }
    }
}

/// Gradient contribution for each input of `node`, `None` where not needed.
fn backward_rule(kind: &OpKind, node: &Node, nodes: &[Node], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let input = |i: usize| &nodes[node.inputs[i]];
    let wants = |i: usize| input(i).needs_grad;
    let y = &node.value;
    let unary = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> {
        if !wants(0) {
            return vec![None];
        }
        vec![Some((0..g.len()).map(f).collect())]
    };
    // Reduces an elementwise upstream to the shape of a possibly broadcast operand.
    let fold = |i: usize, per_elem: Vec<f64>| -> Option<Vec<f64>> {
        if !wants(i) {
            None
        } else if input(i).value.len() == 1 && per_elem.len() != 1 {
            Some(vec![per_elem.iter().sum()])
        } else {
            Some(per_elem)
        }
    };
    let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
    match kind {
        OpKind::Add => vec![fold(0, g.to_vec()), fold(1, g.to_vec())],
        OpKind::Sub => vec![fold(0, g.to_vec()), fold(1, g.iter().map(|v| -v).collect())],
        OpKind::Mul => {
            let (a, b) = (&input(0).value, &input(1).value);
            let ga = wants(0).then(|| (0..g.len()).map(|i| g[i] * at(b, i)).collect());
            let gb = wants(1).then(|| (0..g.len()).map(|i| g[i] * at(a, i)).collect());
            vec![ga.and_then(|v| fold(0, v)), gb.and_then(|v| fold(1, v))]
        }
        OpKind::MatMul => {
            let (a, b) = (input(0), input(1));
            let (m, k) = (a.shape[0], a.shape[1]);
            let n = b.shape[1];
            let ga = wants(0).then(|| {
                let mut out = vec![0.0; m * k];
                linalg::gemm(g, false, &b.value, true, m, n, k, &mut out, 0.0);
                out
            });
            let gb = wants(1).then(|| {
                let mut out = vec![0.0; k * n];
                linalg::gemm(&a.value, true, g, false, k, m, n, &mut out, 0.0);
                out
            });
            vec![ga, gb]
        }
        OpKind::Exp => unary(&|i| g[i] * y[i]),
        OpKind::Ln => {
            let x = &input(0).value;
            unary(&|i| g[i] / x[i])
        }
        OpKind::Square => {
            let x = &input(0).value;
            unary(&|i| 2.0 * x[i] * g[i])
        }
        // Zero at the origin, where the derivative is unbounded.
        OpKind::Sqrt => unary(&|i| if y[i] > 0.0 { g[i] / (2.0 * y[i]) } else { 0.0 }),
        OpKind::Tanh => unary(&|i| g[i] * (1.0 - y[i] * y[i])),
        OpKind::Relu => {
            let x = &input(0).value;
            unary(&|i| if x[i] > 0.0 { g[i] } else { 0.0 })
        }
        OpKind::Softplus => {
            let x = &input(0).value;
            unary(&|i| g[i] * sigmoid(x[i]))
        }
        OpKind::Sigmoid => unary(&|i| g[i] * y[i] * (1.0 - y[i])),
        OpKind::Neg => unary(&|i| -g[i]),
        OpKind::Affine { scale, .. } => unary(&|i| g[i] * scale),
        OpKind::Sum => {
            let n = input(0).value.len();
            vec![wants(0).then(|| vec![g[0]; n])]
        }
        OpKind::Mean => {
            let n = input(0).value.len();
            vec![wants(0).then(|| vec![g[0] / n as f64; n])]
        }
        OpKind::SumAxis(axis) => {
            let (r, c) = (input(0).shape[0], input(0).shape[1]);
            vec![wants(0).then(|| {
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] = if *axis == 0 { g[j] } else { g[i] };
                    }
                }
                out
            })]
        }
        OpKind::Broadcast(to) => {
            let src = input(0);
            vec![wants(0).then(|| {
                let idx = broadcast_index(&src.shape, to).expect("validated in forward");
                let mut out = vec![0.0; src.value.len()];
                for (o, &i) in idx.iter().enumerate() {
                    out[i] += g[o];
                }
                out
            })]
        }
        OpKind::Concat(axis) => {
            let cols_out = node.shape[1];
            let mut offset = 0;
            node.inputs
                .iter()
                .enumerate()
                .map(|(k, _)| {
                    let part = input(k);
                    let (r, c) = (part.shape[0], part.shape[1]);
                    let piece = wants(k).then(|| {
                        if *axis == 0 {
                            g[offset * cols_out..(offset + r) * cols_out].to_vec()
                        } else {
                            (0..r)
                                .flat_map(|i| g[i * cols_out + offset..i * cols_out + offset + c].iter().copied())
                                .collect()
                        }
                    });
                    offset += if *axis == 0 { r } else { c };
                    piece
                })
                .collect()
        }
        OpKind::Slice { axis, start, len } => {
            let (r, c) = (input(0).shape[0], input(0).shape[1]);
            vec![wants(0).then(|| {
                let mut out = vec![0.0; r * c];
                if *axis == 0 {
                    out[start * c..(start + len) * c].copy_from_slice(g);
                } else {
                    for i in 0..r {
                        out[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                }
                out
            })]
        }
        OpKind::Transpose => {
            let (r, c) = (input(0).shape[0], input(0).shape[1]);
            // g is c × r
            vec![wants(0).then(|| linalg::transpose(g, c, r))]
        }
        OpKind::SpdSolve { .. } => {
            // X = K⁻¹B  ⇒  dB = K⁻¹G,  dK = −(K⁻¹G) Xᵀ  (K symmetric)
            let factor = node.factor.as_ref().expect("solve keeps its factor");
            let (n, m) = (node.shape[0], node.shape[1]);
            let a = factor.solve(g, m);
            let gk = wants(0).then(|| {
                let mut out = vec![0.0; n * n];
                linalg::gemm(&a, false, y, true, n, m, n, &mut out, 0.0);
                out.iter_mut().for_each(|v| *v = -*v);
                out
            });
            vec![gk, wants(1).then_some(a)]
        }
    }
}
