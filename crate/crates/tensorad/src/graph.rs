//! Eager tape for reverse-mode differentiation.
//!
//! Every op computes its value immediately and records itself on the tape.
//! [`Graph::grad`] walks the tape backwards and emits the vector-Jacobian
//! products as ordinary tape ops, so a gradient is itself a differentiable
//! value. That is what makes second-order terms (the critic gradient penalty)
//! work without a separate code path.

use std::sync::Arc;

use smallvec::{smallvec, SmallVec};

use crate::element::Element;
use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{self, split_axis, Window};
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    Abs,
    Relu,
    LeakyRelu(f64),
    Sqrt,
    RecipSafe,
    Sum,
    Expand,
    SumAxis(usize),
    ExpandAxis(usize),
    Reshape,
    SwapLeading,
    MatMul { ta: bool, tb: bool },
    Unfold(Window),
    Fold(Window),
    Concat(usize),
    Narrow { axis: usize, start: usize },
    PadAxis { axis: usize, start: usize },
    PixelShuffle(usize),
    PixelUnshuffle(usize),
    GatherCols(Arc<[usize]>),
    ScatterCols(Arc<[usize]>),
}

/// Fieldless mirror of the op set, used to enumerate the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    Abs,
    Relu,
    LeakyRelu,
    Sqrt,
    RecipSafe,
    Sum,
    Expand,
    SumAxis,
    ExpandAxis,
    Reshape,
    SwapLeading,
    MatMul,
    Unfold,
    Fold,
    Concat,
    Narrow,
    PadAxis,
    PixelShuffle,
    PixelUnshuffle,
    GatherCols,
    ScatterCols,
}

impl OpKind {
    /// Every op with a gradient, i.e. everything except leaves.
    pub const DIFFERENTIABLE: [OpKind; 27] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Abs,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::Sqrt,
        OpKind::RecipSafe,
        OpKind::Sum,
        OpKind::Expand,
        OpKind::SumAxis,
        OpKind::ExpandAxis,
        OpKind::Reshape,
        OpKind::SwapLeading,
        OpKind::MatMul,
        OpKind::Unfold,
        OpKind::Fold,
        OpKind::Concat,
        OpKind::Narrow,
        OpKind::PadAxis,
        OpKind::PixelShuffle,
        OpKind::PixelUnshuffle,
        OpKind::GatherCols,
        OpKind::ScatterCols,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Abs => "abs",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Sqrt => "sqrt",
            OpKind::RecipSafe => "recip_safe",
            OpKind::Sum => "sum",
            OpKind::Expand => "expand",
            OpKind::SumAxis => "sum_axis",
            OpKind::ExpandAxis => "expand_axis",
            OpKind::Reshape => "reshape",
            OpKind::SwapLeading => "swap_leading",
            OpKind::MatMul => "matmul",
            OpKind::Unfold => "unfold",
            OpKind::Fold => "fold",
            OpKind::Concat => "concat",
            OpKind::Narrow => "narrow",
            OpKind::PadAxis => "pad_axis",
            OpKind::PixelShuffle => "pixel_shuffle",
            OpKind::PixelUnshuffle => "pixel_unshuffle",
            OpKind::GatherCols => "gather_cols",
            OpKind::ScatterCols => "scatter_cols",
        }
    }
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Div => OpKind::Div,
            Op::Scale(_) => OpKind::Scale,
            Op::AddScalar => OpKind::AddScalar,
            Op::Abs => OpKind::Abs,
            Op::Relu => OpKind::Relu,
            Op::LeakyRelu(_) => OpKind::LeakyRelu,
            Op::Sqrt => OpKind::Sqrt,
            Op::RecipSafe => OpKind::RecipSafe,
            Op::Sum => OpKind::Sum,
            Op::Expand => OpKind::Expand,
            Op::SumAxis(_) => OpKind::SumAxis,
            Op::ExpandAxis(_) => OpKind::ExpandAxis,
            Op::Reshape => OpKind::Reshape,
            Op::SwapLeading => OpKind::SwapLeading,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Unfold(_) => OpKind::Unfold,
            Op::Fold(_) => OpKind::Fold,
            Op::Concat(_) => OpKind::Concat,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::PadAxis { .. } => OpKind::PadAxis,
            Op::PixelShuffle(_) => OpKind::PixelShuffle,
            Op::PixelUnshuffle(_) => OpKind::PixelUnshuffle,
            Op::GatherCols(_) => OpKind::GatherCols,
            Op::ScatterCols(_) => OpKind::ScatterCols,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    inputs: SmallVec<[Var; 2]>,
    requires_grad: bool,
}

/// Append-only tape. Nodes only ever reference earlier nodes, so tape order
/// is a topological order.
pub struct Graph<T: Element = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that does not require a gradient. It can still be named in
    /// [`Graph::grad`]'s `wrt` list, e.g. to differentiate a critic with
    /// respect to its input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: SmallVec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, inputs: SmallVec<[Var; 2]>, value: Tensor<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Kind of op that produced `v`.
    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Copies a value onto the tape as a fresh constant, cutting its history.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    // ----- elementwise -------------------------------------------------------

    fn binary(
        &mut self,
        op: Op,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        Ok(self.push(op, smallvec![a, b], value))
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        self.push(op, smallvec![x], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub, "sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul, "mul", a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Div, "div", a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ct = T::from_f64(c);
        self.unary(Op::Scale(c), x, |v| v * ct)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let ct = T::from_f64(c);
        self.unary(Op::AddScalar, x, |v| v + ct)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Op::Abs, x, |v| v.abs())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Op::Relu, x, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.unary(Op::LeakyRelu(slope), x, |v| {
            if v > T::zero() {
                v
            } else {
                v * s
            }
        })
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Op::Sqrt, x, |v| v.sqrt())
    }

    /// `1/x`, with `1/0` defined as 0.
    pub fn recip_safe(&mut self, x: Var) -> Var {
        self.unary(Op::RecipSafe, x, |v| {
            if v == T::zero() {
                T::zero()
            } else {
                v.recip()
            }
        })
    }

    // ----- reductions and broadcasts ----------------------------------------

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        self.push(Op::Sum, smallvec![x], Tensor::scalar(s))
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.numel() != 1 {
            return Err(shape_err(
                "expand",
                format!("source {:?} is not a scalar", v.shape()),
            ));
        }
        let value = Tensor::new(shape, vec![v.item(); numel(shape)])?;
        Ok(self.push(Op::Expand, smallvec![x], value))
    }

    /// Sums along `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(
                "sum_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let data = kernels::sum_axis(self.value(x).data(), outer, len, inner);
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(Op::SumAxis(axis), smallvec![x], value))
    }

    /// Repeats a length-1 `axis` to length `len`.
    pub fn expand_axis(&mut self, x: Var, axis: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] != 1 {
            return Err(shape_err(
                "expand_axis",
                format!("axis {axis} of {shape:?} must have length 1"),
            ));
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let data = kernels::expand_axis(self.value(x).data(), outer, len, inner);
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(Op::ExpandAxis(axis), smallvec![x], value))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape, smallvec![x], value))
    }

    /// `[a, b, l] -> [b, a, l]`.
    pub fn swap_leading(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let [a, b, l] = match v.shape()[..] {
            [a, b, l] => [a, b, l],
            _ => {
                return Err(shape_err(
                    "swap_leading",
                    format!("expected rank 3, got {:?}", v.shape()),
                ))
            }
        };
        let data = kernels::swap_leading(v.data(), a, b, l);
        let value = Tensor::new(&[b, a, l], data)?;
        Ok(self.push(Op::SwapLeading, smallvec![x], value))
    }

    // ----- linear algebra ----------------------------------------------------

    /// `op(a) · op(b)` for matrices, where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let ad = self.value(a).dims2("matmul")?;
        let bd = self.value(b).dims2("matmul")?;
        let ka = if ta { ad[0] } else { ad[1] };
        let kb = if tb { bd[1] } else { bd[0] };
        if ka != kb {
            return Err(shape_err(
                "matmul",
                format!(
                    "inner dims differ: {ad:?}{} x {bd:?}{}",
                    tmark(ta),
                    tmark(tb)
                ),
            ));
        }
        let (m, n, data) =
            kernels::matmul(self.value(a).data(), ad, ta, self.value(b).data(), bd, tb);
        let value = Tensor::new(&[m, n], data)?;
        Ok(self.push(Op::MatMul { ta, tb }, smallvec![a, b], value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// im2col over an NCHW input: `[c·k·k, n·oh·ow]`.
    pub fn unfold(&mut self, x: Var, win: Window) -> Result<Var> {
        let dims = self.value(x).dims4("unfold")?;
        if win.out_len(dims[2]).is_none() || win.out_len(dims[3]).is_none() {
            return Err(shape_err(
                "unfold",
                format!("window {win:?} does not fit {dims:?}"),
            ));
        }
        let (r, c, data) = kernels::unfold(self.value(x).data(), dims, win);
        let value = Tensor::new(&[r, c], data)?;
        Ok(self.push(Op::Unfold(win), smallvec![x], value))
    }

    /// col2im into an NCHW tensor of shape `dims`; overlaps are summed.
    pub fn fold(&mut self, x: Var, win: Window, dims: [usize; 4]) -> Result<Var> {
        let xd = self.value(x).dims2("fold")?;
        let (oh, ow) = match (win.out_len(dims[2]), win.out_len(dims[3])) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(shape_err(
                    "fold",
                    format!("window {win:?} does not fit {dims:?}"),
                ))
            }
        };
        let expect = [dims[1] * win.kernel * win.kernel, dims[0] * oh * ow];
        if xd != expect {
            return Err(shape_err(
                "fold",
                format!("columns {xd:?}, expected {expect:?}"),
            ));
        }
        let data = kernels::fold(self.value(x).data(), dims, win);
        let value = Tensor::new(&dims, data)?;
        Ok(self.push(Op::Fold(win), smallvec![x], value))
    }

    // ----- layout ------------------------------------------------------------

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err(
                    "concat",
                    format!("{s:?} vs {base:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                data.extend_from_slice(
                    &self.value(x).data()[o * len * inner..(o + 1) * len * inner],
                );
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(Op::Concat(axis), xs.iter().copied().collect(), value))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(shape_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let data = kernels::narrow(self.value(x).data(), outer, total, inner, start, len);
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(Op::Narrow { axis, start }, smallvec![x], value))
    }

    /// Zero-pads `axis` to length `total`, placing the input at `start`.
    pub fn pad_axis(&mut self, x: Var, axis: usize, start: usize, total: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + shape[axis] > total {
            return Err(shape_err(
                "pad_axis",
                format!("{shape:?} at {start} on axis {axis} exceeds {total}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let data = kernels::pad_axis(self.value(x).data(), outer, len, inner, start, total);
        let mut out_shape = shape;
        out_shape[axis] = total;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(Op::PadAxis { axis, start }, smallvec![x], value))
    }

    /// `[n, c·r², h, w] -> [n, c, h·r, w·r]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("pixel_shuffle")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(shape_err(
                "pixel_shuffle",
                format!("{c} channels not divisible by {r}²"),
            ));
        }
        let data = kernels::pixel_shuffle(self.value(x).data(), [n, c, h, w], r);
        let value = Tensor::new(&[n, c / (r * r), h * r, w * r], data)?;
        Ok(self.push(Op::PixelShuffle(r), smallvec![x], value))
    }

    /// `[n, c, h·r, w·r] -> [n, c·r², h, w]`.
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("pixel_unshuffle")?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(shape_err(
                "pixel_unshuffle",
                format!("{h}x{w} not divisible by {r}"),
            ));
        }
        let data = kernels::pixel_unshuffle(self.value(x).data(), [n, c, h, w], r);
        let value = Tensor::new(&[n, c * r * r, h / r, w / r], data)?;
        Ok(self.push(Op::PixelUnshuffle(r), smallvec![x], value))
    }

    /// Selects columns `idx` of a matrix.
    pub fn gather_cols(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let [rows, cols] = self.value(x).dims2("gather_cols")?;
        if let Some(bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(shape_err(
                "gather_cols",
                format!("index {bad} >= {cols} columns"),
            ));
        }
        let data = kernels::gather_cols(self.value(x).data(), rows, cols, &idx);
        let value = Tensor::new(&[rows, idx.len()], data)?;
        Ok(self.push(Op::GatherCols(idx), smallvec![x], value))
    }

    /// Scatter-adds the columns of `x` into a zero matrix with `cols` columns.
    pub fn scatter_cols(&mut self, x: Var, idx: Arc<[usize]>, cols: usize) -> Result<Var> {
        let [rows, q] = self.value(x).dims2("scatter_cols")?;
        if q != idx.len() || idx.iter().any(|&i| i >= cols) {
            return Err(shape_err(
                "scatter_cols",
                format!("{q} columns, {} indices, target width {cols}", idx.len()),
            ));
        }
        let data = kernels::scatter_cols(self.value(x).data(), rows, cols, &idx);
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(Op::ScatterCols(idx), smallvec![x], value))
    }

    // ----- differentiation ---------------------------------------------------

    /// Gradients of the one-element `output` with respect to `wrt`.
    ///
    /// The returned gradients are tape values, so they can be differentiated
    /// again. `None` means `output` does not depend on that variable.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Option<Var>>> {
        if self.value(output).numel() != 1 {
            return Err(shape_err(
                "grad",
                format!("output must be a scalar, got {:?}", self.shape(output)),
            ));
        }
        let end = output.0 + 1;
        let mut reach = vec![false; end];
        for w in wrt {
            if w.0 < end {
                reach[w.0] = true;
            }
        }
        for i in 0..end {
            if !reach[i] && self.nodes[i].inputs.iter().any(|v| reach[v.0]) {
                reach[i] = true;
            }
        }
        let mut grads: Vec<Option<Var>> = vec![None; end];
        if reach[output.0] {
            let seed = Tensor::ones(self.shape(output));
            grads[output.0] = Some(self.constant(seed));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if self.nodes[i].inputs.is_empty() {
                continue;
            }
            let inputs = self.nodes[i].inputs.clone();
            let op = self.nodes[i].op.clone();
            let need: SmallVec<[bool; 2]> = inputs.iter().map(|v| reach[v.0]).collect();
            let contribs = self.vjp(&op, &inputs, Var(i), g, &need)?;
            for ((inp, c), needed) in inputs.iter().zip(contribs).zip(need) {
                let Some(c) = c else { continue };
                if !needed {
                    continue;
                }
                grads[inp.0] = Some(match grads[inp.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| if w.0 < end { grads[w.0] } else { None })
            .collect())
    }

    fn mask(&mut self, x: Var, f: impl Fn(T) -> T) -> Var {
        let m = self.value(x).map(f);
        self.constant(m)
    }

    fn vjp(
        &mut self,
        op: &Op,
        inputs: &[Var],
        out: Var,
        g: Var,
        need: &[bool],
    ) -> Result<SmallVec<[Option<Var>; 2]>> {
        let x = inputs[0];
        let one = |v: Var| -> SmallVec<[Option<Var>; 2]> { smallvec![Some(v)] };
        Ok(match op {
            Op::Leaf => SmallVec::new(),
            Op::Add => smallvec![Some(g), Some(g)],
            Op::Sub => {
                let db = if need[1] {
                    Some(self.scale(g, -1.0))
                } else {
                    None
                };
                smallvec![Some(g), db]
            }
            Op::Mul => {
                let b = inputs[1];
                let da = if need[0] { Some(self.mul(g, b)?) } else { None };
                let db = if need[1] { Some(self.mul(g, x)?) } else { None };
                smallvec![da, db]
            }
            Op::Div => {
                let b = inputs[1];
                let da = if need[0] { Some(self.div(g, b)?) } else { None };
                let db = if need[1] {
                    let gy = self.mul(g, out)?;
                    let q = self.div(gy, b)?;
                    Some(self.scale(q, -1.0))
                } else {
                    None
                };
                smallvec![da, db]
            }
            Op::Scale(c) => one(self.scale(g, *c)),
            Op::AddScalar => one(g),
            Op::Abs => {
                let m = self.mask(x, |v| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                one(self.mul(g, m)?)
            }
            Op::Relu => {
                let m = self.mask(x, |v| if v > T::zero() { T::one() } else { T::zero() });
                one(self.mul(g, m)?)
            }
            Op::LeakyRelu(slope) => {
                let s = T::from_f64(*slope);
                let m = self.mask(x, |v| if v > T::zero() { T::one() } else { s });
                one(self.mul(g, m)?)
            }
            Op::Sqrt => {
                // d sqrt(x) = 1 / (2 sqrt(x)); taken as 0 where sqrt(x) = 0.
                let r = self.recip_safe(out);
                let half = self.scale(r, 0.5);
                one(self.mul(g, half)?)
            }
            Op::RecipSafe => {
                let sq = self.mul(out, out)?;
                let gs = self.mul(g, sq)?;
                one(self.scale(gs, -1.0))
            }
            Op::Sum => {
                let shape = self.shape(x).to_vec();
                one(self.expand(g, &shape)?)
            }
            Op::Expand => {
                let shape = self.shape(x).to_vec();
                let s = self.sum(g);
                one(self.reshape(s, &shape)?)
            }
            Op::SumAxis(axis) => {
                let len = self.shape(x)[*axis];
                one(self.expand_axis(g, *axis, len)?)
            }
            Op::ExpandAxis(axis) => one(self.sum_axis(g, *axis)?),
            Op::Reshape => {
                let shape = self.shape(x).to_vec();
                one(self.reshape(g, &shape)?)
            }
            Op::SwapLeading => one(self.swap_leading(g)?),
            Op::MatMul { ta, tb } => {
                let b = inputs[1];
                let (da, db) = match (*ta, *tb) {
                    (false, false) => (
                        if need[0] {
                            Some(self.matmul_t(g, false, b, true)?)
                        } else {
                            None
                        },
                        if need[1] {
                            Some(self.matmul_t(x, true, g, false)?)
                        } else {
                            None
                        },
                    ),
                    (true, false) => (
                        if need[0] {
                            Some(self.matmul_t(b, false, g, true)?)
                        } else {
                            None
                        },
                        if need[1] {
                            Some(self.matmul_t(x, false, g, false)?)
                        } else {
                            None
                        },
                    ),
                    (false, true) => (
                        if need[0] {
                            Some(self.matmul_t(g, false, b, false)?)
                        } else {
                            None
                        },
                        if need[1] {
                            Some(self.matmul_t(g, true, x, false)?)
                        } else {
                            None
                        },
                    ),
                    (true, true) => (
                        if need[0] {
                            Some(self.matmul_t(b, true, g, true)?)
                        } else {
                            None
                        },
                        if need[1] {
                            Some(self.matmul_t(g, true, x, true)?)
                        } else {
                            None
                        },
                    ),
                };
                smallvec![da, db]
            }
            Op::Unfold(win) => {
                let dims = self.value(x).dims4("unfold")?;
                one(self.fold(g, *win, dims)?)
            }
            Op::Fold(win) => one(self.unfold(g, *win)?),
            Op::Concat(axis) => {
                let mut parts = SmallVec::new();
                let mut start = 0;
                for (k, &inp) in inputs.iter().enumerate() {
                    let len = self.shape(inp)[*axis];
                    parts.push(if need[k] {
                        Some(self.narrow(g, *axis, start, len)?)
                    } else {
                        None
                    });
                    start += len;
                }
                parts
            }
            Op::Narrow { axis, start } => {
                let total = self.shape(x)[*axis];
                one(self.pad_axis(g, *axis, *start, total)?)
            }
            Op::PadAxis { axis, start } => {
                let len = self.shape(x)[*axis];
                one(self.narrow(g, *axis, *start, len)?)
            }
            Op::PixelShuffle(r) => one(self.pixel_unshuffle(g, *r)?),
            Op::PixelUnshuffle(r) => one(self.pixel_shuffle(g, *r)?),
            Op::GatherCols(idx) => {
                let cols = self.shape(x)[1];
                one(self.scatter_cols(g, idx.clone(), cols)?)
            }
            Op::ScatterCols(idx) => one(self.gather_cols(g, idx.clone())?),
        })
    }
}

fn tmark(t: bool) -> &'static str {
    if t {
        "ᵀ"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gradient_is_one_over_n() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[2, 5], |i| i as f64));
        let s = g.sum(x);
        let m = g.scale(s, 1.0 / 10.0);
        let dx = g.grad(m, &[x]).unwrap()[0].unwrap();
        assert!(g.value(dx).data().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn l1_gradient_on_positive_entries_is_one() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[7], |i| 0.5 + i as f64));
        let a = g.abs(x);
        let l1 = g.sum(a);
        let dx = g.grad(l1, &[x]).unwrap()[0].unwrap();
        assert!(g.value(dx).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[3], vec![-2.0, 0.0, 3.0]).unwrap());
        let a = g.abs(x);
        let l1 = g.sum(a);
        let dx = g.grad(l1, &[x]).unwrap()[0].unwrap();
        assert_eq!(g.value(dx).data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx (x·x) = 2x
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[2], vec![3.0, -1.5]).unwrap());
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let dx = g.grad(s, &[x]).unwrap()[0].unwrap();
        assert_eq!(g.value(dx).data(), &[6.0, -3.0]);
    }

    #[test]
    fn second_derivative_through_gradient() {
        // f = sum(x³) via x·x·x; d/dx sum(df/dx) = 6x
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[2], vec![2.0, -1.0]).unwrap());
        let x2 = g.mul(x, x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let f = g.sum(x3);
        let dx = g.grad(f, &[x]).unwrap()[0].unwrap();
        assert_eq!(g.value(dx).data(), &[12.0, 3.0]);
        let s = g.sum(dx);
        let ddx = g.grad(s, &[x]).unwrap()[0].unwrap();
        assert_eq!(g.value(ddx).data(), &[12.0, -6.0]);
    }

    #[test]
    fn unrelated_variable_has_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]));
        let y = g.param(Tensor::ones(&[3]));
        let s = g.sum(x);
        let grads = g.grad(s, &[x, y]).unwrap();
        assert!(grads[0].is_some());
        assert!(grads[1].is_none());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[2, 3]));
        let b = g.constant(Tensor::ones(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(
            matches!(err, TensorError::Shape { op: "matmul", .. }),
            "{err}"
        );
        let err = g.add(a, b).unwrap_err();
        assert!(matches!(err, TensorError::Shape { op: "add", .. }), "{err}");
    }

    #[test]
    fn grad_rejects_non_scalar_output() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::ones(&[2]));
        assert!(g.grad(a, &[a]).is_err());
    }
}
