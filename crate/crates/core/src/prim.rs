//! Primitive operations: shape rules, forward values and local gradient rules.
//!
//! Broadcasting is limited to matrix × vector products and the explicit
//! row-bias add; everything else requires identical shapes.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in `{op}`: {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("non-finite output from `{op}`")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("column index {index} out of range for {cols} columns")]
    Index { index: usize, cols: usize },
}

/// The primitive vocabulary recorded on a tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Prim {
    MatMul,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// `[r, c] + [c]`: adds a bias vector to every row.
    AddRow,
    Scale(f64),
    Relu,
    Sin,
    Cos,
    Square,
    Sum,
    Mean,
    /// Column-wise concatenation of matrices (or plain concatenation of vectors).
    Concat,
    /// Gathers the listed columns, in order.
    Select(Vec<usize>),
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::AddRow => "add_row",
            Prim::Scale(_) => "scale",
            Prim::Relu => "relu",
            Prim::Sin => "sin",
            Prim::Cos => "cos",
            Prim::Square => "square",
            Prim::Sum => "sum",
            Prim::Mean => "mean",
            Prim::Concat => "concat",
            Prim::Select(_) => "select",
        }
    }
}

fn shape_err(op: &Prim, inputs: &[&Tensor]) -> DiffError {
    DiffError::Shape { op: op.name(), shapes: inputs.iter().map(|t| t.shape().to_vec()).collect() }
}

/// `c = a · b` for row-major operands described by (rows, cols, row stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: the caller guarantees the strides address `m×k` and `k×n`
    // elements within `a` and `b`; `c` is a dense `m×n` buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// (rows, inner) view of a matmul left operand; a vector is one row.
fn lhs_dims(t: &Tensor) -> (usize, usize) {
    match t.rank() {
        2 => (t.shape()[0], t.shape()[1]),
        _ => (1, t.cols()),
    }
}

/// (inner, cols) view of a matmul right operand; a vector is one column.
fn rhs_dims(t: &Tensor) -> (usize, usize) {
    match t.rank() {
        2 => (t.shape()[0], t.shape()[1]),
        _ => (t.cols(), 1),
    }
}

fn matmul_shape(a: &Tensor, b: &Tensor) -> Option<Vec<usize>> {
    match (a.rank(), b.rank()) {
        (2, 2) if a.shape()[1] == b.shape()[0] => Some(vec![a.shape()[0], b.shape()[1]]),
        (2, 1) if a.shape()[1] == b.shape()[0] => Some(vec![a.shape()[0]]),
        (1, 2) if a.shape()[0] == b.shape()[0] => Some(vec![b.shape()[1]]),
        _ => None,
    }
}

/// Computes the forward value of `op`, validating shapes.
pub fn forward(op: &Prim, inputs: &[&Tensor]) -> Result<Tensor, DiffError> {
    let arity_ok = match op {
        Prim::MatMul | Prim::Add | Prim::Sub | Prim::Mul | Prim::AddRow => inputs.len() == 2,
        Prim::Concat => !inputs.is_empty(),
        _ => inputs.len() == 1,
    };
    if !arity_ok {
        return Err(shape_err(op, inputs));
    }
    let out = match op {
        Prim::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let shape = matmul_shape(a, b).ok_or_else(|| shape_err(op, inputs))?;
            let (m, k) = lhs_dims(a);
            let (_, n) = rhs_dims(b);
            let data = gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1);
            Tensor::new(shape, data)
        }
        Prim::Add | Prim::Sub | Prim::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(op, inputs));
            }
            match op {
                Prim::Add => a.zip_map(b, |x, y| x + y),
                Prim::Sub => a.zip_map(b, |x, y| x - y),
                _ => a.zip_map(b, |x, y| x * y),
            }
        }
        Prim::AddRow => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() == 0 || b.rank() != 1 || a.cols() != b.len() {
                return Err(shape_err(op, inputs));
            }
            let c = b.len();
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(c) {
                for (x, y) in row.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            Tensor::new(a.shape().to_vec(), data)
        }
        Prim::Scale(s) => {
            let s = *s;
            inputs[0].map(|x| x * s)
        }
        Prim::Relu => inputs[0].map(|x| if x > 0.0 { x } else { 0.0 }),
        Prim::Sin => inputs[0].map(f64::sin),
        Prim::Cos => inputs[0].map(f64::cos),
        Prim::Square => inputs[0].map(|x| x * x),
        Prim::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
        Prim::Mean => {
            let a = inputs[0];
            if a.is_empty() {
                return Err(shape_err(op, inputs));
            }
            Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        }
        Prim::Concat => concat(inputs).ok_or_else(|| shape_err(op, inputs))?,
        Prim::Select(idx) => {
            let a = inputs[0];
            if a.rank() == 0 {
                return Err(shape_err(op, inputs));
            }
            let cols = a.cols();
            if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
                return Err(DiffError::Index { index: bad, cols });
            }
            let rows = a.rows();
            let mut data = Vec::with_capacity(rows * idx.len());
            for r in 0..rows {
                let row = a.row(r);
                data.extend(idx.iter().map(|&i| row[i]));
            }
            let shape = if a.rank() == 2 { vec![rows, idx.len()] } else { vec![idx.len()] };
            Tensor::new(shape, data)
        }
    };
    Ok(out)
}

fn concat(inputs: &[&Tensor]) -> Option<Tensor> {
    let rank = inputs[0].rank();
    if rank == 0 || inputs.iter().any(|t| t.rank() != rank) {
        return None;
    }
    let rows = inputs[0].rows();
    if inputs.iter().any(|t| t.rows() != rows) {
        return None;
    }
    let total: usize = inputs.iter().map(|t| t.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for t in inputs {
            data.extend_from_slice(t.row(r));
        }
    }
    let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
    Some(Tensor::new(shape, data))
}

/// Local gradient rule: cotangents of each input given the output cotangent.
/// `wanted[i]` false skips the work for input `i` (returns `None` there).
pub fn backward(
    op: &Prim,
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &Tensor,
    wanted: &[bool],
) -> Vec<Option<Tensor>> {
    let want = |i: usize| wanted.get(i).copied().unwrap_or(false);
    match op {
        Prim::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = lhs_dims(a);
            let (_, n) = rhs_dims(b);
            // dA = dC · Bᵀ   (m×n · n×k)
            let da = want(0).then(|| {
                let d = gemm(m, n, k, grad.data(), n as isize, 1, b.data(), 1, n as isize);
                Tensor::new(a.shape().to_vec(), d)
            });
            // dB = Aᵀ · dC   (k×m · m×n)
            let db = want(1).then(|| {
                let d = gemm(k, m, n, a.data(), 1, k as isize, grad.data(), n as isize, 1);
                Tensor::new(b.shape().to_vec(), d)
            });
            vec![da, db]
        }
        Prim::Add => vec![want(0).then(|| grad.clone()), want(1).then(|| grad.clone())],
        Prim::Sub => vec![want(0).then(|| grad.clone()), want(1).then(|| grad.map(|g| -g))],
        Prim::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![
                want(0).then(|| grad.zip_map(b, |g, y| g * y)),
                want(1).then(|| grad.zip_map(a, |g, x| g * x)),
            ]
        }
        Prim::AddRow => {
            let b = inputs[1];
            let db = want(1).then(|| {
                let c = b.len();
                let mut acc = vec![0.0; c];
                for row in grad.data().chunks(c) {
                    for (s, g) in acc.iter_mut().zip(row) {
                        *s += g;
                    }
                }
                Tensor::vector(acc)
            });
            vec![want(0).then(|| grad.clone()), db]
        }
        Prim::Scale(s) => {
            let s = *s;
            vec![want(0).then(|| grad.map(|g| g * s))]
        }
        // Subgradient at 0 is 0.
        Prim::Relu => vec![want(0).then(|| grad.zip_map(inputs[0], |g, x| if x > 0.0 { g } else { 0.0 }))],
        Prim::Sin => vec![want(0).then(|| grad.zip_map(inputs[0], |g, x| g * x.cos()))],
        Prim::Cos => vec![want(0).then(|| grad.zip_map(inputs[0], |g, x| -g * x.sin()))],
        Prim::Square => vec![want(0).then(|| grad.zip_map(inputs[0], |g, x| 2.0 * g * x))],
        Prim::Sum => {
            let g = grad.item();
            vec![want(0).then(|| Tensor::full(inputs[0].shape().to_vec(), g))]
        }
        Prim::Mean => {
            let g = grad.item() / inputs[0].len() as f64;
            vec![want(0).then(|| Tensor::full(inputs[0].shape().to_vec(), g))]
        }
        Prim::Concat => {
            let rows = output.rows();
            let total = output.cols();
            let mut offset = 0;
            inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let c = t.cols();
                    let part = want(i).then(|| {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&grad.data()[r * total + offset..r * total + offset + c]);
                        }
                        Tensor::new(t.shape().to_vec(), d)
                    });
                    offset += c;
                    part
                })
                .collect()
        }
        Prim::Select(idx) => {
            let a = inputs[0];
            let da = want(0).then(|| {
                let cols = a.cols();
                let mut d = vec![0.0; a.len()];
                for r in 0..a.rows() {
                    let g = &grad.data()[r * idx.len()..(r + 1) * idx.len()];
                    for (j, &i) in idx.iter().enumerate() {
                        d[r * cols + i] += g[j];
                    }
                }
                Tensor::new(a.shape().to_vec(), d)
            });
            vec![da]
        }
    }
}
