use super::kernels as k;
use super::{Ops, Tensor};
use crate::error::Result;

/// Plain forward evaluation, no derivative bookkeeping.
#[derive(Debug, Default)]
pub struct Eval;

fn finite(t: Tensor, op: &'static str) -> Result<Tensor> {
    t.check_finite(op)?;
    Ok(t)
}

impl Ops for Eval {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        finite(k::matmul(a, b)?, "matmul")
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let bc = k::add_broadcast(a, b)?;
        finite(k::add(a, b, bc), "add")
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let bc = k::mul_broadcast(a, b)?;
        finite(k::mul(a, b, bc), "mul")
    }

    fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(k::relu(a))
    }

    fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(k::tanh(a))
    }

    fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(k::sigmoid(a))
    }

    fn log_softmax(&mut self, a: &Tensor) -> Result<Tensor> {
        finite(k::log_softmax(a), "log_softmax")
    }

    fn softmax(&mut self, a: &Tensor) -> Result<Tensor> {
        finite(k::softmax(a), "softmax")
    }

    fn concat(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        k::concat(a, b)
    }

    fn gather_rows(&mut self, table: &Tensor, indices: &[usize]) -> Result<Tensor> {
        k::gather_rows(table, indices)
    }

    fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        finite(Tensor::scalar(a.sum()), "sum")
    }

    fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        finite(Tensor::scalar(a.sum() / a.len() as f64), "mean")
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        finite(a.scale(c), "scale")
    }

    fn slice(&mut self, flat: &Tensor, offset: usize, shape: &[usize]) -> Result<Tensor> {
        k::slice(flat, offset, shape)
    }
}
