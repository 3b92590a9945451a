//! Primitive set: forward values, shape rules and vector-Jacobian products.

use crate::array::{matmul_into, Array};
use crate::error::AutodiffError;

/// Floor applied inside [`Op::Log`]. Inputs at or below it are clamped and
/// receive zero gradient, so this is a non-smooth point of the primitive.
pub const LOG_FLOOR: f64 = 1e-12;

/// Variance epsilon for [`Op::LayerNorm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Primitive tag plus its attributes.
///
/// Shape rules:
/// - `Add`, `Sub`, `Mul`: identical shapes, or one operand has a single element.
/// - `Matmul`: `[m,k] x [k,n] -> [m,n]`.
/// - `Softmax`, `LayerNorm`, `StraightThrough`: act on the last axis, shape preserved.
/// - `Sum`, `Mean`, `L2Norm`: any shape to a rank-0 scalar.
/// - `MeanRows`: `[L,D] -> [1,D]`; `RepeatRows(n)`: `[1,D] -> [n,D]`.
/// - `Slice`/`Concat`: along `axis`, all other extents must agree.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Matmul,
    Scale(f64),
    Offset(f64),
    Exp,
    Log,
    Tanh,
    Relu,
    Sqrt,
    Softmax,
    Sum,
    Mean,
    MeanRows,
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Concat {
        axis: usize,
    },
    L2Norm,
    Transpose,
    RepeatRows(usize),
    LayerNorm,
    /// Forward value is the row-wise argmax one-hot, gradient passes through unchanged.
    StraightThrough,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Matmul => "matmul",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Sqrt => "sqrt",
            Op::Softmax => "softmax",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::MeanRows => "mean_rows",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::L2Norm => "l2_norm",
            Op::Transpose => "transpose",
            Op::RepeatRows(_) => "repeat_rows",
            Op::LayerNorm => "layer_norm",
            Op::StraightThrough => "straight_through",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf | Op::Constant => Some(0),
            Op::Add | Op::Sub | Op::Mul | Op::Matmul => Some(2),
            Op::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Result of a forward evaluation: the value and how many entries hit the log floor.
pub(crate) struct Forward {
    pub value: Array,
    pub clamped: usize,
}

fn shape_err(op: &Op, a: &Array, b: &Array) -> AutodiffError {
    AutodiffError::Shape {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn attr_err(op: &Op, a: &Array, why: &str) -> AutodiffError {
    AutodiffError::Attr {
        op: op.name(),
        shape: a.shape().to_vec(),
        reason: why.to_string(),
    }
}

fn elementwise(
    op: &Op,
    a: &Array,
    b: &Array,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Array, AutodiffError> {
    if a.shape() == b.shape() {
        Ok(a.zip_map(b, f))
    } else if b.is_scalar() {
        let s = b.item();
        Ok(a.map(|x| f(x, s)))
    } else if a.is_scalar() {
        let s = a.item();
        Ok(b.map(|x| f(s, x)))
    } else {
        Err(shape_err(op, a, b))
    }
}

fn last_axis(a: &Array) -> (usize, usize) {
    let cols = *a.shape().last().unwrap_or(&1);
    let rows = if cols == 0 { 0 } else { a.len() / cols };
    (rows, cols)
}

/// `(outer, axis extent, inner)` decomposition for slicing along `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn forward(op: &Op, inputs: &[&Array]) -> Result<Forward, AutodiffError> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(AutodiffError::Arity {
                op: op.name(),
                expected: n,
                got: inputs.len(),
            });
        }
    } else if inputs.is_empty() {
        return Err(AutodiffError::Arity {
            op: op.name(),
            expected: 1,
            got: 0,
        });
    }
    let mut clamped = 0;
    let value = match op {
        Op::Leaf | Op::Constant => unreachable!("leaves are created directly"),
        Op::Add => elementwise(op, inputs[0], inputs[1], |x, y| x + y)?,
        Op::Sub => elementwise(op, inputs[0], inputs[1], |x, y| x - y)?,
        Op::Mul => elementwise(op, inputs[0], inputs[1], |x, y| x * y)?,
        Op::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(op, a, b));
            }
            a.matmul(b)
        }
        Op::Scale(c) => inputs[0].map(|x| x * c),
        Op::Offset(c) => inputs[0].map(|x| x + c),
        Op::Exp => inputs[0].map(f64::exp),
        Op::Log => {
            clamped = inputs[0]
                .data()
                .iter()
                .filter(|&&x| !(x > LOG_FLOOR))
                .count();
            inputs[0].map(|x| x.max(LOG_FLOOR).ln())
        }
        Op::Tanh => inputs[0].map(f64::tanh),
        Op::Relu => inputs[0].map(|x| x.max(0.0)),
        Op::Sqrt => inputs[0].map(|x| x.max(0.0).sqrt()),
        Op::Softmax => softmax_last(inputs[0]),
        Op::Sum => Array::scalar(inputs[0].sum()),
        Op::Mean => {
            if inputs[0].is_empty() {
                return Err(attr_err(op, inputs[0], "mean of an empty array"));
            }
            Array::scalar(inputs[0].mean())
        }
        Op::MeanRows => {
            let a = inputs[0];
            if a.rank() != 2 || a.shape()[0] == 0 {
                return Err(attr_err(op, a, "expects a non-empty rank-2 array"));
            }
            let (r, c) = a.dims2();
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(a.row_slice(i)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Array::new(&[1, c], out)
        }
        Op::Slice { axis, start, len } => {
            let a = inputs[0];
            if *axis >= a.rank() || start + len > a.shape()[*axis] {
                return Err(attr_err(
                    op,
                    a,
                    &format!(
                        "slice axis {} [{}, {}) out of range",
                        axis,
                        start,
                        start + len
                    ),
                ));
            }
            let (outer, ext, inner) = split_axis(a.shape(), *axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * ext * inner;
                out.extend_from_slice(
                    &a.data()[base + start * inner..base + (start + len) * inner],
                );
            }
            let mut shape = a.shape().to_vec();
            shape[*axis] = *len;
            Array::new(&shape, out)
        }
        Op::Concat { axis } => {
            let first = inputs[0];
            if *axis >= first.rank() {
                return Err(attr_err(op, first, "concat axis out of range"));
            }
            for other in &inputs[1..] {
                let ok = other.rank() == first.rank()
                    && other
                        .shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (x, y))| d == *axis || x == y);
                if !ok {
                    return Err(shape_err(op, first, other));
                }
            }
            let (outer, _, inner) = split_axis(first.shape(), *axis);
            let total: usize = inputs.iter().map(|a| a.shape()[*axis]).sum();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for a in inputs {
                    let ext = a.shape()[*axis];
                    out.extend_from_slice(&a.data()[o * ext * inner..(o + 1) * ext * inner]);
                }
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = total;
            Array::new(&shape, out)
        }
        Op::L2Norm => Array::scalar(inputs[0].l2_norm()),
        Op::Transpose => {
            if inputs[0].rank() != 2 {
                return Err(attr_err(op, inputs[0], "expects rank 2"));
            }
            inputs[0].transpose()
        }
        Op::RepeatRows(n) => {
            let a = inputs[0];
            if a.rank() != 2 || a.shape()[0] != 1 {
                return Err(attr_err(op, a, "expects a [1, D] row"));
            }
            let mut out = Vec::with_capacity(n * a.len());
            for _ in 0..*n {
                out.extend_from_slice(a.data());
            }
            Array::new(&[*n, a.len()], out)
        }
        Op::LayerNorm => layer_norm(inputs[0]),
        Op::StraightThrough => {
            let a = inputs[0];
            let (rows, cols) = last_axis(a);
            let mut out = Array::zeros(a.shape());
            for r in 0..rows {
                let row = &a.data()[r * cols..(r + 1) * cols];
                out.data_mut()[r * cols + crate::array::argmax(row)] = 1.0;
            }
            out
        }
    };
    Ok(Forward { value, clamped })
}

fn softmax_last(a: &Array) -> Array {
    let (rows, cols) = last_axis(a);
    let mut out = a.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

fn layer_norm(a: &Array) -> Array {
    let (rows, cols) = last_axis(a);
    let mut out = a.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let mu = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.iter_mut().for_each(|x| *x = (*x - mu) * inv);
    }
    out
}

/// Reduce an adjoint to the shape of a (possibly broadcast) scalar operand.
fn unbroadcast(g: Array, target: &Array) -> Array {
    if g.shape() == target.shape() {
        g
    } else {
        Array::full(target.shape(), g.sum())
    }
}

/// Vector-Jacobian product: adjoints for each input given the output adjoint `g`.
pub(crate) fn backward(op: &Op, inputs: &[&Array], out: &Array, g: &Array) -> Vec<Array> {
    match op {
        Op::Leaf | Op::Constant => Vec::new(),
        Op::Add => vec![
            unbroadcast(g.clone(), inputs[0]),
            unbroadcast(g.clone(), inputs[1]),
        ],
        Op::Sub => vec![
            unbroadcast(g.clone(), inputs[0]),
            unbroadcast(g.map(|x| -x), inputs[1]),
        ],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = elementwise(op, g, b, |x, y| x * y).expect("shapes checked in forward");
            let gb = elementwise(op, g, a, |x, y| x * y).expect("shapes checked in forward");
            vec![unbroadcast(ga, a), unbroadcast(gb, b)]
        }
        Op::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.dims2();
            let n = b.shape()[1];
            // dA = g B^T, dB = A^T g
            let bt = b.transpose();
            let mut ga = vec![0.0; m * k];
            matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
            let at = a.transpose();
            let mut gb = vec![0.0; k * n];
            matmul_into(at.data(), g.data(), &mut gb, k, m, n);
            vec![Array::new(&[m, k], ga), Array::new(&[k, n], gb)]
        }
        Op::Scale(c) => vec![g.map(|x| x * c)],
        Op::Offset(_) => vec![g.clone()],
        Op::Exp => vec![g.zip_map(out, |x, y| x * y)],
        Op::Log => vec![g.zip_map(inputs[0], |x, a| if a > LOG_FLOOR { x / a } else { 0.0 })],
        Op::Tanh => vec![g.zip_map(out, |x, y| x * (1.0 - y * y))],
        Op::Relu => vec![g.zip_map(inputs[0], |x, a| if a > 0.0 { x } else { 0.0 })],
        Op::Sqrt => vec![g.zip_map(out, |x, y| if y > 0.0 { x / (2.0 * y) } else { 0.0 })],
        Op::Softmax => {
            let (rows, cols) = last_axis(out);
            let mut gx = Array::zeros(out.shape());
            for r in 0..rows {
                let span = r * cols..(r + 1) * cols;
                let y = &out.data()[span.clone()];
                let gy = &g.data()[span.clone()];
                let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                for (dst, (yi, gi)) in gx.data_mut()[span].iter_mut().zip(y.iter().zip(gy)) {
                    *dst = yi * (gi - dot);
                }
            }
            vec![gx]
        }
        Op::Sum => vec![Array::full(inputs[0].shape(), g.item())],
        Op::Mean => vec![Array::full(
            inputs[0].shape(),
            g.item() / inputs[0].len() as f64,
        )],
        Op::MeanRows => {
            let (r, c) = inputs[0].dims2();
            let mut gx = Vec::with_capacity(r * c);
            for _ in 0..r {
                gx.extend(g.data().iter().map(|x| x / r as f64));
            }
            vec![Array::new(&[r, c], gx)]
        }
        Op::Slice { axis, start, len } => {
            let a = inputs[0];
            let (outer, ext, inner) = split_axis(a.shape(), *axis);
            let mut gx = Array::zeros(a.shape());
            for o in 0..outer {
                let base = o * ext * inner;
                gx.data_mut()[base + start * inner..base + (start + len) * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![gx]
        }
        Op::Concat { axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut grads: Vec<Array> = inputs.iter().map(|a| Array::zeros(a.shape())).collect();
            for o in 0..outer {
                let mut offset = 0;
                for (gi, a) in grads.iter_mut().zip(inputs) {
                    let ext = a.shape()[*axis];
                    let src = o * total * inner + offset * inner;
                    gi.data_mut()[o * ext * inner..(o + 1) * ext * inner]
                        .copy_from_slice(&g.data()[src..src + ext * inner]);
                    offset += ext;
                }
            }
            grads
        }
        Op::L2Norm => {
            let n = out.item();
            let s = g.item();
            if n > 0.0 {
                vec![inputs[0].map(|x| s * x / n)]
            } else {
                vec![Array::zeros(inputs[0].shape())]
            }
        }
        Op::Transpose => vec![g.transpose()],
        Op::RepeatRows(n) => {
            let c = inputs[0].len();
            let mut gx = vec![0.0; c];
            for r in 0..*n {
                for (o, v) in gx.iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                    *o += v;
                }
            }
            vec![Array::new(&[1, c], gx)]
        }
        Op::LayerNorm => {
            let a = inputs[0];
            let (rows, cols) = last_axis(a);
            let mut gx = Array::zeros(a.shape());
            let nf = cols as f64;
            for r in 0..rows {
                let span = r * cols..(r + 1) * cols;
                let x = &a.data()[span.clone()];
                let xhat = &out.data()[span.clone()];
                let gy = &g.data()[span.clone()];
                let mu = x.iter().sum::<f64>() / nf;
                let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / nf;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                let g_mean = gy.iter().sum::<f64>() / nf;
                let gx_mean = gy.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
                for (dst, (gi, xi)) in gx.data_mut()[span].iter_mut().zip(gy.iter().zip(xhat)) {
                    *dst = inv * (gi - g_mean - xi * gx_mean);
                }
            }
            vec![gx]
        }
        Op::StraightThrough => vec![g.clone()],
    }
}
