//! Reverse-mode automatic differentiation on a recording tape.
//!
//! A [`Tape`] owns every value produced during a forward pass as a [`Node`]
//! in creation order, so parents always precede children and the backward
//! sweep is a single reverse iteration. [`Tensor`] is a cheap handle
//! (node id + cached shape) into its tape.
//!
//! All storage is 64-bit, row-major. Broadcasting is deliberately limited to
//! the explicit `*_row` / `*_col` / `*_scalar` primitives so that every
//! gradient path stays auditable. Kernels are plain loops: the same seed and
//! the same op sequence give bit-identical data and gradient buffers.

mod backward;
pub mod gradcheck;
pub mod kernels;

use std::cell::RefCell;
use std::ops::Range;
use std::rc::Rc;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// One recorded primitive. Payloads hold parent node ids plus whatever
/// metadata the vector-Jacobian product needs.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Recip(NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    ClampMin(NodeId, f64),
    MulScalar(NodeId, NodeId),
    AddScalar(NodeId, NodeId),
    MeanAxis0(NodeId),
    MeanAxis1(NodeId),
    VarAxis0(NodeId),
    VarAxis1(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    AddCol(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    SelectRows(NodeId, Vec<usize>),
    Row(NodeId, usize),
    SliceCols(NodeId, Range<usize>),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    ConcatVec(Vec<NodeId>),
    SoftmaxRows(NodeId),
    Conv1d { x: NodeId, w: NodeId, b: NodeId },
    Reshape(NodeId),
    ScaleGrad(NodeId, f64),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Abs(..) => "abs",
            Op::Recip(..) => "recip",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::ClampMin(..) => "clamp_min",
            Op::MulScalar(..) => "mul_scalar",
            Op::AddScalar(..) => "add_scalar",
            Op::MeanAxis0(..) => "mean_axis0",
            Op::MeanAxis1(..) => "mean_axis1",
            Op::VarAxis0(..) => "var_axis0",
            Op::VarAxis1(..) => "var_axis1",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::AddCol(..) => "add_col",
            Op::MulCol(..) => "mul_col",
            Op::SelectRows(..) => "select_rows",
            Op::Row(..) => "row",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::StackRows(..) => "stack_rows",
            Op::ConcatVec(..) => "concat_vec",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Conv1d { .. } => "conv1d",
            Op::Reshape(..) => "reshape",
            Op::ScaleGrad(..) => "scale_gradient",
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) data: Vec<f64>,
    pub(crate) shape: Vec<usize>,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) requires_grad: bool,
}

#[derive(Debug, Default)]
pub(crate) struct TapeInner {
    pub(crate) nodes: Vec<Node>,
}

/// Shared, single-threaded recording tape.
///
/// Clone is cheap (reference count); all tensors created from clones share
/// the same node arena. Dropping the last handle frees everything.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, op: Op, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            data,
            shape: shape.clone(),
            grad: None,
            requires_grad,
        });
        Tensor {
            id,
            shape,
            tape: self.clone(),
        }
    }

    /// A differentiable leaf (parameter or checked input).
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf data/shape mismatch"
        );
        self.push(Op::Leaf, data, shape.to_vec(), true)
    }

    /// A non-differentiable value (targets, masks, noise draws, positions).
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "constant data/shape mismatch"
        );
        self.push(Op::Leaf, data, shape.to_vec(), false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(vec![v], &[1])
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        self.constant(vec![0.0; shape.iter().product()], shape)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all accumulated gradient buffers, keeping values.
    pub fn clear_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    /// Earliest node holding a NaN/Inf, by primitive name. Used by the
    /// gradient checker to attribute non-finite failures.
    pub fn first_non_finite(&self) -> Option<String> {
        let inner = self.inner.borrow();
        for node in &inner.nodes {
            if node.data.iter().any(|v| !v.is_finite()) {
                return Some(node.op.name().to_string());
            }
        }
        None
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Handle to one value on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    id: NodeId,
    shape: Vec<usize>,
    tape: Tape,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

macro_rules! unary_op {
    ($name:ident, $variant:ident, $f:expr) => {
        pub fn $name(&self) -> Tensor {
            let data: Vec<f64> = self.map_data(|d| d.iter().map($f).collect());
            self.tape.push(
                Op::$variant(self.id),
                data,
                self.shape.clone(),
                self.requires_grad(),
            )
        }
    };
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Copy of the node's value buffer.
    pub fn data(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].data.clone()
    }

    /// Run `f` on the value buffer without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].data)
    }

    /// Copy of the accumulated gradient, if any backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Scalar value; panics when the tensor is not a single element.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item() on non-scalar tensor {:?}",
            self.shape
        );
        self.tape.inner.borrow().nodes[self.id].data[0]
    }

    fn map_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        self.with_data(f)
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::InvalidArgument {
                op,
                msg: format!("expected 2-d tensor, got shape {:?}", other),
            }),
        }
    }

    fn binary_elementwise(
        &self,
        other: &Tensor,
        op_name: &'static str,
        make: impl FnOnce(NodeId, NodeId) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        assert!(
            self.tape.same(&other.tape),
            "tensors from different tapes in `{op_name}`"
        );
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self.with_data(|a| {
            other.with_data(|b| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
        });
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self
            .tape
            .push(make(self.id, other.id), data, self.shape.clone(), rg))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "div", Op::Div, |a, b| a / b)
    }

    /// `self[m,k] @ other[k,n] -> [m,n]`
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        assert!(
            self.tape.same(&other.tape),
            "tensors from different tapes in `matmul`"
        );
        let (m, k) = self.rows_cols("matmul")?;
        let (k2, n) = other.rows_cols("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self.with_data(|a| other.with_data(|b| kernels::matmul(a, b, m, k, n)));
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self
            .tape
            .push(Op::Matmul(self.id, other.id), data, vec![m, n], rg))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.rows_cols("transpose")?;
        let data = self.with_data(|a| kernels::transpose(a, m, n));
        Ok(self.tape.push(
            Op::Transpose(self.id),
            data,
            vec![n, m],
            self.requires_grad(),
        ))
    }

    unary_op!(sigmoid, Sigmoid, |&x| kernels::sigmoid(x));
    unary_op!(tanh, Tanh, |&x: &f64| x.tanh());
    unary_op!(exp, Exp, |&x: &f64| x.exp());
    unary_op!(log, Log, |&x: &f64| x.ln());
    unary_op!(sqrt, Sqrt, |&x: &f64| x.sqrt());
    unary_op!(abs, Abs, |&x: &f64| x.abs());
    unary_op!(recip, Recip, |&x: &f64| 1.0 / x);

    /// Multiply every element by a compile-time constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.map_data(|d| d.iter().map(|&x| x * c).collect());
        self.tape.push(
            Op::Scale(self.id, c),
            data,
            self.shape.clone(),
            self.requires_grad(),
        )
    }

    /// Add a constant to every element.
    pub fn shift(&self, c: f64) -> Tensor {
        let data = self.map_data(|d| d.iter().map(|&x| x + c).collect());
        self.tape.push(
            Op::Shift(self.id),
            data,
            self.shape.clone(),
            self.requires_grad(),
        )
    }

    /// Element-wise `max(x, c)`; gradient is zero on the clamped side.
    pub fn clamp_min(&self, c: f64) -> Tensor {
        let data = self.map_data(|d| d.iter().map(|&x| x.max(c)).collect());
        self.tape.push(
            Op::ClampMin(self.id, c),
            data,
            self.shape.clone(),
            self.requires_grad(),
        )
    }

    /// Multiply by a single-element tensor (broadcast over all elements).
    pub fn mul_scalar(&self, s: &Tensor) -> Result<Tensor> {
        assert!(
            self.tape.same(&s.tape),
            "tensors from different tapes in `mul_scalar`"
        );
        if s.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "mul_scalar",
                lhs: self.shape.clone(),
                rhs: s.shape.clone(),
            });
        }
        let sv = s.item();
        let data = self.map_data(|d| d.iter().map(|&x| x * sv).collect());
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self
            .tape
            .push(Op::MulScalar(self.id, s.id), data, self.shape.clone(), rg))
    }

    /// Add a single-element tensor (broadcast over all elements).
    pub fn add_scalar(&self, s: &Tensor) -> Result<Tensor> {
        assert!(
            self.tape.same(&s.tape),
            "tensors from different tapes in `add_scalar`"
        );
        if s.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "add_scalar",
                lhs: self.shape.clone(),
                rhs: s.shape.clone(),
            });
        }
        let sv = s.item();
        let data = self.map_data(|d| d.iter().map(|&x| x + sv).collect());
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self
            .tape
            .push(Op::AddScalar(self.id, s.id), data, self.shape.clone(), rg))
    }

    /// Column means of a rows×cols tensor -> `[cols]`.
    pub fn mean_axis0(&self) -> Result<Tensor> {
        let (r, c) = self.rows_cols("mean_axis0")?;
        let data = self.with_data(|d| {
            let mut out = vec![0.0; c];
            for t in 0..r {
                for j in 0..c {
                    out[j] += d[t * c + j];
                }
            }
            out.iter_mut().for_each(|v| *v /= r as f64);
            out
        });
        Ok(self
            .tape
            .push(Op::MeanAxis0(self.id), data, vec![c], self.requires_grad()))
    }

    /// Row means of a rows×cols tensor -> `[rows]`.
    pub fn mean_axis1(&self) -> Result<Tensor> {
        let (r, c) = self.rows_cols("mean_axis1")?;
        let data = self.with_data(|d| {
            (0..r)
                .map(|t| d[t * c..(t + 1) * c].iter().sum::<f64>() / c as f64)
                .collect()
        });
        Ok(self
            .tape
            .push(Op::MeanAxis1(self.id), data, vec![r], self.requires_grad()))
    }

    /// Biased (population) per-column variance over rows -> `[cols]`.
    pub fn var_axis0(&self) -> Result<Tensor> {
        let (r, c) = self.rows_cols("var_axis0")?;
        let data = self.with_data(|d| {
            let mut mean = vec![0.0; c];
            for t in 0..r {
                for j in 0..c {
                    mean[j] += d[t * c + j];
                }
            }
            mean.iter_mut().for_each(|v| *v /= r as f64);
            let mut var = vec![0.0; c];
            for t in 0..r {
                for j in 0..c {
                    let dev = d[t * c + j] - mean[j];
                    var[j] += dev * dev;
                }
            }
            var.iter_mut().for_each(|v| *v /= r as f64);
            var
        });
        Ok(self
            .tape
            .push(Op::VarAxis0(self.id), data, vec![c], self.requires_grad()))
    }

    /// Biased (population) per-row variance over columns -> `[rows]`.
    pub fn var_axis1(&self) -> Result<Tensor> {
        let (r, c) = self.rows_cols("var_axis1")?;
        let data = self.with_data(|d| {
            (0..r)
                .map(|t| {
                    let row = &d[t * c..(t + 1) * c];
                    let m = row.iter().sum::<f64>() / c as f64;
                    row.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / c as f64
                })
                .collect()
        });
        Ok(self
            .tape
            .push(Op::VarAxis1(self.id), data, vec![r], self.requires_grad()))
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.map_data(|d| d.iter().sum::<f64>());
        self.tape
            .push(Op::SumAll(self.id), vec![s], vec![1], self.requires_grad())
    }

    pub fn mean_all(&self) -> Tensor {
        let s = self.map_data(|d| d.iter().sum::<f64>() / d.len() as f64);
        self.tape
            .push(Op::MeanAll(self.id), vec![s], vec![1], self.requires_grad())
    }

    fn row_broadcast(
        &self,
        v: &Tensor,
        op_name: &'static str,
        make: impl FnOnce(NodeId, NodeId) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        assert!(
            self.tape.same(&v.tape),
            "tensors from different tapes in `{op_name}`"
        );
        let (r, c) = self.rows_cols(op_name)?;
        if v.shape != [c] {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: self.shape.clone(),
                rhs: v.shape.clone(),
            });
        }
        let data = self.with_data(|d| {
            v.with_data(|vv| {
                let mut out = Vec::with_capacity(r * c);
                for t in 0..r {
                    for j in 0..c {
                        out.push(f(d[t * c + j], vv[j]));
                    }
                }
                out
            })
        });
        let rg = self.requires_grad() || v.requires_grad();
        Ok(self
            .tape
            .push(make(self.id, v.id), data, self.shape.clone(), rg))
    }

    fn col_broadcast(
        &self,
        v: &Tensor,
        op_name: &'static str,
        make: impl FnOnce(NodeId, NodeId) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        assert!(
            self.tape.same(&v.tape),
            "tensors from different tapes in `{op_name}`"
        );
        let (r, c) = self.rows_cols(op_name)?;
        if v.shape != [r] {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: self.shape.clone(),
                rhs: v.shape.clone(),
            });
        }
        let data = self.with_data(|d| {
            v.with_data(|vv| {
                let mut out = Vec::with_capacity(r * c);
                for t in 0..r {
                    for j in 0..c {
                        out.push(f(d[t * c + j], vv[t]));
                    }
                }
                out
            })
        });
        let rg = self.requires_grad() || v.requires_grad();
        Ok(self
            .tape
            .push(make(self.id, v.id), data, self.shape.clone(), rg))
    }

    /// `self[t,c] + v[c]` broadcast over rows (bias add).
    pub fn add_row(&self, v: &Tensor) -> Result<Tensor> {
        self.row_broadcast(v, "add_row", Op::AddRow, |a, b| a + b)
    }

    /// `self[t,c] * v[c]` broadcast over rows (per-channel gain).
    pub fn mul_row(&self, v: &Tensor) -> Result<Tensor> {
        self.row_broadcast(v, "mul_row", Op::MulRow, |a, b| a * b)
    }

    /// `self[t,c] + v[t]` broadcast over columns.
    pub fn add_col(&self, v: &Tensor) -> Result<Tensor> {
        self.col_broadcast(v, "add_col", Op::AddCol, |a, b| a + b)
    }

    /// `self[t,c] * v[t]` broadcast over columns.
    pub fn mul_col(&self, v: &Tensor) -> Result<Tensor> {
        self.col_broadcast(v, "mul_col", Op::MulCol, |a, b| a * b)
    }

    /// Gather rows by index; indices may repeat (backward scatter-adds).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = self.rows_cols("select_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArgument {
                op: "select_rows",
                msg: format!("row index {bad} out of range for {r} rows"),
            });
        }
        let data = self.with_data(|d| {
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                out.extend_from_slice(&d[i * c..(i + 1) * c]);
            }
            out
        });
        Ok(self.tape.push(
            Op::SelectRows(self.id, indices.to_vec()),
            data,
            vec![indices.len(), c],
            self.requires_grad(),
        ))
    }

    /// Single row of a 2-d tensor as a 1-d vector.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        let (r, c) = self.rows_cols("row")?;
        if i >= r {
            return Err(Error::InvalidArgument {
                op: "row",
                msg: format!("row index {i} out of range for {r} rows"),
            });
        }
        let data = self.with_data(|d| d[i * c..(i + 1) * c].to_vec());
        Ok(self
            .tape
            .push(Op::Row(self.id, i), data, vec![c], self.requires_grad()))
    }

    /// Contiguous column range of a 2-d tensor.
    pub fn slice_cols(&self, range: Range<usize>) -> Result<Tensor> {
        let (r, c) = self.rows_cols("slice_cols")?;
        if range.start >= range.end || range.end > c {
            return Err(Error::InvalidArgument {
                op: "slice_cols",
                msg: format!("column range {range:?} invalid for {c} columns"),
            });
        }
        let w = range.end - range.start;
        let data = self.with_data(|d| {
            let mut out = Vec::with_capacity(r * w);
            for t in 0..r {
                out.extend_from_slice(&d[t * c + range.start..t * c + range.end]);
            }
            out
        });
        Ok(self.tape.push(
            Op::SliceCols(self.id, range),
            data,
            vec![r, w],
            self.requires_grad(),
        ))
    }

    /// Concatenate 2-d tensors with equal row counts along the column axis.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_cols of zero tensors");
        let tape = parts[0].tape.clone();
        let (r, _) = parts[0].rows_cols("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            assert!(
                tape.same(&p.tape),
                "tensors from different tapes in `concat_cols`"
            );
            let (pr, pc) = p.rows_cols("concat_cols")?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for t in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                p.with_data(|d| data.extend_from_slice(&d[t * w..(t + 1) * w]));
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(Op::ConcatCols(ids), data, vec![r, total], rg))
    }

    /// Stack equal-length 1-d vectors as the rows of a 2-d tensor.
    pub fn stack_rows(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "stack_rows of zero tensors");
        let tape = parts[0].tape.clone();
        let c = parts[0].numel();
        let mut data = Vec::with_capacity(parts.len() * c);
        for p in parts {
            assert!(
                tape.same(&p.tape),
                "tensors from different tapes in `stack_rows`"
            );
            if p.shape.len() != 1 || p.numel() != c {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: parts[0].shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            p.with_data(|d| data.extend_from_slice(d));
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(Op::StackRows(ids), data, vec![parts.len(), c], rg))
    }

    /// Concatenate 1-d vectors end to end.
    pub fn concat_vec(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_vec of zero tensors");
        let tape = parts[0].tape.clone();
        let mut data = Vec::new();
        for p in parts {
            assert!(
                tape.same(&p.tape),
                "tensors from different tapes in `concat_vec`"
            );
            if p.shape.len() != 1 {
                return Err(Error::InvalidArgument {
                    op: "concat_vec",
                    msg: format!("expected 1-d tensors, got shape {:?}", p.shape),
                });
            }
            p.with_data(|d| data.extend_from_slice(d));
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        let n = data.len();
        Ok(tape.push(Op::ConcatVec(ids), data, vec![n], rg))
    }

    /// Row-wise softmax of a 2-d tensor.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (r, c) = self.rows_cols("softmax_rows")?;
        let data = self.with_data(|d| kernels::softmax_rows(d, r, c));
        Ok(self.tape.push(
            Op::SoftmaxRows(self.id),
            data,
            self.shape.clone(),
            self.requires_grad(),
        ))
    }

    /// Same-length 1-D convolution over the row (frame) axis.
    ///
    /// `self` is frames×cin, `w` is `[cout, cin, k]` with `k` odd, `b` is `[cout]`.
    pub fn conv1d(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        assert!(
            self.tape.same(&w.tape) && self.tape.same(&b.tape),
            "tensors from different tapes in `conv1d`"
        );
        let (frames, cin) = self.rows_cols("conv1d")?;
        let (cout, wcin, k) = match w.shape.as_slice() {
            [a, b, c] => (*a, *b, *c),
            other => {
                return Err(Error::InvalidArgument {
                    op: "conv1d",
                    msg: format!("weight must be [cout, cin, k], got {:?}", other),
                })
            }
        };
        if wcin != cin || b.shape != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        if k % 2 == 0 || frames == 0 {
            return Err(Error::InvalidArgument {
                op: "conv1d",
                msg: format!("kernel {k} must be odd and input non-empty (frames={frames})"),
            });
        }
        let data = self.with_data(|x| {
            w.with_data(|wd| b.with_data(|bd| kernels::conv1d(x, wd, bd, frames, cin, cout, k)))
        });
        let rg = self.requires_grad() || w.requires_grad() || b.requires_grad();
        Ok(self.tape.push(
            Op::Conv1d {
                x: self.id,
                w: w.id,
                b: b.id,
            },
            data,
            vec![frames, cout],
            rg,
        ))
    }

    /// Reinterpret the value buffer under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.data();
        Ok(self.tape.push(
            Op::Reshape(self.id),
            data,
            shape.to_vec(),
            self.requires_grad(),
        ))
    }

    /// Identity forward; multiplies the backward gradient by `factor`.
    pub fn scale_grad(&self, factor: f64) -> Tensor {
        let data = self.data();
        self.tape.push(
            Op::ScaleGrad(self.id, factor),
            data,
            self.shape.clone(),
            self.requires_grad(),
        )
    }

    /// Accumulate d(self)/d(ancestor) into every `requires_grad` ancestor.
    ///
    /// `self` must be a single-element tensor. Repeated calls keep adding
    /// into the same gradient buffers; use [`Tape::clear_grads`] to reset.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::InvalidArgument {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.shape),
            });
        }
        let mut inner = self.tape.inner.borrow_mut();
        backward::run(&mut inner, self.id);
        Ok(())
    }
}

/// Mean squared error over all cells.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.mean_all())
}

/// Mean absolute error over all cells.
pub fn mae(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.sub(b)?.abs().mean_all())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(tape: &Tape, data: &[f64]) -> Tensor {
        tape.leaf(data.to_vec(), &[data.len()])
    }

    #[test]
    fn add_elementwise() {
        let tape = Tape::new();
        let a = t(&tape, &[1.0, 2.0]);
        let b = t(&tape, &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), vec![4.0, 6.0]);
    }

    #[test]
    fn add_shape_mismatch_names_op_and_shapes() {
        let tape = Tape::new();
        let a = t(&tape, &[1.0, 2.0]);
        let b = t(&tape, &[1.0, 2.0, 3.0]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"),
            "{msg}"
        );
    }

    #[test]
    fn matmul_identity_passthrough() {
        let tape = Tape::new();
        let eye = tape.constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        let x = tape.constant(vec![1.0, -2.0, 0.5, 4.0, 2.0, 9.0], &[3, 2]);
        assert_eq!(eye.matmul(&x).unwrap().data(), x.data());
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = t(&tape, &[0.0]);
        let y = x.sigmoid();
        assert_eq!(y.item(), 0.5);
        y.sum_all().backward().unwrap();
        // d/dx sigmoid(0) = 0.25
        assert_eq!(x.grad().unwrap(), vec![0.25]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let tape = Tape::new();
        let x = t(&tape, &[1.0, -2.0, 3.0]);
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sum_of_squares_gives_2x() {
        let tape = Tape::new();
        let x = t(&tape, &[1.0, -2.0, 3.0]);
        x.mul(&x).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = t(&tape, &[1.0, 2.0]);
        assert!(x.backward().is_err());
    }

    #[test]
    fn gradient_accumulation_is_additive() {
        // backward over f and g separately accumulates grad(f) + grad(g)
        let tape = Tape::new();
        let x = t(&tape, &[1.5, -0.5]);
        let f = x.mul(&x).unwrap().sum_all();
        let g = x.scale(3.0).sum_all();
        f.backward().unwrap();
        g.backward().unwrap();
        let got = x.grad().unwrap();

        let tape2 = Tape::new();
        let x2 = t(&tape2, &[1.5, -0.5]);
        let both = x2
            .mul(&x2)
            .unwrap()
            .sum_all()
            .add(&x2.scale(3.0).sum_all())
            .unwrap();
        both.backward().unwrap();
        assert_eq!(got, x2.grad().unwrap());
    }

    #[test]
    fn select_rows_scatter_adds_repeats() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let y = x.select_rows(&[0, 0, 1]).unwrap();
        assert_eq!(y.data(), vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn scale_grad_identity_forward_scaled_backward() {
        let tape = Tape::new();
        let x = t(&tape, &[2.0, -1.0]);
        let y = x.scale_grad(0.1);
        assert_eq!(y.data(), x.data());
        y.mul(&y).unwrap().sum_all().backward().unwrap();
        // unscaled grad would be 2x
        assert_eq!(x.grad().unwrap(), vec![0.4, -0.2]);
    }

    #[test]
    fn softmax_rows_sum_one_and_masked() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.3, 0.3, -1e30, 1.2, 0.0, -1e30], &[2, 3]);
        let s = x.softmax_rows().unwrap();
        let d = s.data();
        for r in 0..2 {
            let sum: f64 = d[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(d[r * 3 + 2], 0.0);
        }
    }

    #[test]
    fn determinism_same_seed_same_bits() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
            let tape = Tape::new();
            let data: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = tape.leaf(data, &[3, 4]);
            let w_data: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
            let w = tape.leaf(w_data, &[4, 2]);
            let y = x.matmul(&w).unwrap().tanh().mean_all();
            y.backward().unwrap();
            (
                y.item().to_bits(),
                x.grad()
                    .unwrap()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
