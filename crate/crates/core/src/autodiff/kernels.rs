//! Primal kernels shared by the plain, taped, and dual evaluators.

use super::Tensor;
use crate::error::{Error, Result};

fn expect_rank2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0],
            found: other.to_vec(),
        }),
    }
}

/// `a · b` for `a: [m,k]`, `b: [k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = expect_rank2(a, "matmul")?;
    let (k2, n) = expect_rank2(b, "matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            expected: vec![k, n],
            found: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `aᵀ · b` for `a: [k,m]`, `b: [k,n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let api = ad[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

/// How the right operand of `add`/`mul` is broadcast against the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    None,
    /// Right operand `[n]` added to every row of `[m,n]`.
    Row,
    /// Right operand `[m,1]` multiplied into every column of `[m,n]`.
    Column,
}

pub fn add_broadcast(a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::None);
    }
    if let ([_, n], [n2]) = (a.shape(), b.shape()) {
        if n == n2 {
            return Ok(Broadcast::Row);
        }
    }
    Err(Error::ShapeMismatch {
        op: "add",
        expected: a.shape().to_vec(),
        found: b.shape().to_vec(),
    })
}

pub fn mul_broadcast(a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::None);
    }
    if let ([m, _], [m2, 1]) = (a.shape(), b.shape()) {
        if m == m2 {
            return Ok(Broadcast::Column);
        }
    }
    Err(Error::ShapeMismatch {
        op: "mul",
        expected: a.shape().to_vec(),
        found: b.shape().to_vec(),
    })
}

pub fn add(a: &Tensor, b: &Tensor, bc: Broadcast) -> Tensor {
    match bc {
        Broadcast::None => {
            Tensor::from_parts(a.shape().to_vec(), zip(a.data(), b.data(), |x, y| x + y))
        }
        Broadcast::Row => {
            let n = b.len();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + b.data()[i % n])
                .collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Broadcast::Column => unreachable!("add never broadcasts by column"),
    }
}

pub fn mul(a: &Tensor, b: &Tensor, bc: Broadcast) -> Tensor {
    match bc {
        Broadcast::None => {
            Tensor::from_parts(a.shape().to_vec(), zip(a.data(), b.data(), |x, y| x * y))
        }
        Broadcast::Column => {
            let n = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x * b.data()[i / n])
                .collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Broadcast::Row => unreachable!("mul never broadcasts by row"),
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Sum over columns of `[m,n]` into `[n]` (adjoint of row broadcast).
pub fn sum_rows(a: &Tensor) -> Tensor {
    let n = a.cols();
    let mut out = vec![0.0; n];
    for r in 0..a.rows() {
        for (o, v) in out.iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![n], out)
}

/// Per-row sum of `[m,n]` into `[m,1]` (adjoint of column broadcast).
pub fn sum_cols(a: &Tensor) -> Tensor {
    let m = a.rows();
    let data = (0..m).map(|r| a.row(r).iter().sum()).collect();
    Tensor::from_parts(vec![m, 1], data)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| v.max(0.0))
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(f64::tanh)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

/// Row-wise log-softmax over the last axis with max subtraction.
pub fn log_softmax(a: &Tensor) -> Tensor {
    let n = a.cols();
    let mut out = Vec::with_capacity(a.len());
    for row in a.data().chunks(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::from_parts(a.shape().to_vec(), out)
}

pub fn softmax(a: &Tensor) -> Tensor {
    let n = a.cols();
    let mut out = Vec::with_capacity(a.len());
    for row in a.data().chunks(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    Tensor::from_parts(a.shape().to_vec(), out)
}

pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, p) = expect_rank2(a, "concat")?;
    let (m2, q) = expect_rank2(b, "concat")?;
    if m != m2 {
        return Err(Error::ShapeMismatch {
            op: "concat",
            expected: vec![m, q],
            found: b.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(m * (p + q));
    for r in 0..m {
        out.extend_from_slice(a.row(r));
        out.extend_from_slice(b.row(r));
    }
    Ok(Tensor::from_parts(vec![m, p + q], out))
}

/// Split the last axis of `[m, p+q]` at `p`.
pub fn split(a: &Tensor, p: usize) -> (Tensor, Tensor) {
    let (m, n) = (a.rows(), a.cols());
    let q = n - p;
    let mut left = Vec::with_capacity(m * p);
    let mut right = Vec::with_capacity(m * q);
    for r in 0..m {
        let row = a.row(r);
        left.extend_from_slice(&row[..p]);
        right.extend_from_slice(&row[p..]);
    }
    (
        Tensor::from_parts(vec![m, p], left),
        Tensor::from_parts(vec![m, q], right),
    )
}

pub fn gather_rows(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (rows, cols) = expect_rank2(table, "gather_rows")?;
    if indices.is_empty() {
        return Err(Error::InvalidArgument("gather_rows needs indices".into()));
    }
    let mut out = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        if i >= rows {
            return Err(Error::LabelOutOfRange {
                label: i,
                classes: rows,
            });
        }
        out.extend_from_slice(table.row(i));
    }
    Ok(Tensor::from_parts(vec![indices.len(), cols], out))
}

/// Adjoint of [`gather_rows`]: scatter-add rows into a `[rows, cols]` table.
pub fn scatter_rows(grad: &Tensor, indices: &[usize], rows: usize) -> Tensor {
    let cols = grad.cols();
    let mut out = vec![0.0; rows * cols];
    for (r, &i) in indices.iter().enumerate() {
        for (o, v) in out[i * cols..(i + 1) * cols].iter_mut().zip(grad.row(r)) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![rows, cols], out)
}

pub fn slice(flat: &Tensor, offset: usize, shape: &[usize]) -> Result<Tensor> {
    let len: usize = shape.iter().product();
    if flat.shape().len() != 1 || offset + len > flat.len() || len == 0 {
        return Err(Error::ShapeMismatch {
            op: "slice",
            expected: vec![offset + len],
            found: flat.shape().to_vec(),
        });
    }
    Ok(Tensor::from_parts(
        shape.to_vec(),
        flat.data()[offset..offset + len].to_vec(),
    ))
}

/// Adjoint of [`slice`]: embed a segment into a zero vector of `total` entries.
pub fn unslice(seg: &Tensor, offset: usize, total: usize) -> Tensor {
    let mut out = vec![0.0; total];
    out[offset..offset + seg.len()].copy_from_slice(seg.data());
    Tensor::from_parts(vec![total], out)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() || classes == 0 {
        return Err(Error::InvalidArgument(
            "one_hot needs labels and classes".into(),
        ));
    }
    let mut out = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        out[r * classes + l] = 1.0;
    }
    Ok(Tensor::from_parts(vec![labels.len(), classes], out))
}
