use super::kernels as k;
use super::{Ops, Tensor};
use crate::error::{Error, Result};

/// A primal value paired with its tangent.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTensor {
    primal: Tensor,
    tangent: Tensor,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            return Err(Error::ShapeMismatch {
                op: "dual",
                expected: primal.shape().to_vec(),
                found: tangent.shape().to_vec(),
            });
        }
        Ok(DualTensor { primal, tangent })
    }

    pub fn constant(primal: Tensor) -> Self {
        let tangent = primal.zeros_like();
        DualTensor { primal, tangent }
    }

    pub fn primal(&self) -> &Tensor {
        &self.primal
    }

    pub fn tangent(&self) -> &Tensor {
        &self.tangent
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.primal, self.tangent)
    }

    fn checked(primal: Tensor, tangent: Tensor, op: &'static str) -> Result<Self> {
        primal.check_finite(op)?;
        tangent.check_finite(op)?;
        Ok(DualTensor { primal, tangent })
    }
}

/// Forward-mode evaluator over [`DualTensor`]s.
#[derive(Debug, Default)]
pub struct DualEval;

fn elementwise(
    a: &DualTensor,
    op: &'static str,
    f: impl Fn(f64) -> (f64, f64),
) -> Result<DualTensor> {
    let mut p = Vec::with_capacity(a.primal.len());
    let mut t = Vec::with_capacity(a.primal.len());
    for (&x, &dx) in a.primal.data().iter().zip(a.tangent.data()) {
        let (y, dy) = f(x);
        p.push(y);
        t.push(dy * dx);
    }
    let shape = a.primal.shape().to_vec();
    DualTensor::checked(
        Tensor::from_parts(shape.clone(), p),
        Tensor::from_parts(shape, t),
        op,
    )
}

impl Ops for DualEval {
    type Value = DualTensor;

    fn constant(&mut self, t: Tensor) -> DualTensor {
        DualTensor::constant(t)
    }

    fn matmul(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let p = k::matmul(&a.primal, &b.primal)?;
        let mut t = k::matmul(&a.tangent, &b.primal)?;
        t.axpy(1.0, &k::matmul(&a.primal, &b.tangent)?)?;
        DualTensor::checked(p, t, "matmul")
    }

    fn add(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let bc = k::add_broadcast(&a.primal, &b.primal)?;
        DualTensor::checked(
            k::add(&a.primal, &b.primal, bc),
            k::add(&a.tangent, &b.tangent, bc),
            "add",
        )
    }

    fn mul(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        let bc = k::mul_broadcast(&a.primal, &b.primal)?;
        let p = k::mul(&a.primal, &b.primal, bc);
        let mut t = k::mul(&a.tangent, &b.primal, bc);
        t.axpy(1.0, &k::mul(&a.primal, &b.tangent, bc))?;
        DualTensor::checked(p, t, "mul")
    }

    fn relu(&mut self, a: &DualTensor) -> Result<DualTensor> {
        elementwise(a, "relu", |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    fn tanh(&mut self, a: &DualTensor) -> Result<DualTensor> {
        elementwise(a, "tanh", |x| {
            let y = x.tanh();
            (y, 1.0 - y * y)
        })
    }

    fn sigmoid(&mut self, a: &DualTensor) -> Result<DualTensor> {
        elementwise(a, "sigmoid", |x| {
            let y = k::sigmoid_scalar(x);
            (y, y * (1.0 - y))
        })
    }

    fn log_softmax(&mut self, a: &DualTensor) -> Result<DualTensor> {
        // dy = dx − ⟨softmax(x), dx⟩ per row
        let y = k::log_softmax(&a.primal);
        let n = y.cols();
        let mut t = Vec::with_capacity(y.len());
        for (yr, dr) in y.data().chunks(n).zip(a.tangent.data().chunks(n)) {
            let s: f64 = yr.iter().zip(dr).map(|(&yv, &dv)| yv.exp() * dv).sum();
            t.extend(dr.iter().map(|&dv| dv - s));
        }
        let shape = y.shape().to_vec();
        DualTensor::checked(y, Tensor::from_parts(shape, t), "log_softmax")
    }

    fn softmax(&mut self, a: &DualTensor) -> Result<DualTensor> {
        // dy = y ⊙ (dx − ⟨y, dx⟩) per row
        let y = k::softmax(&a.primal);
        let n = y.cols();
        let mut t = Vec::with_capacity(y.len());
        for (yr, dr) in y.data().chunks(n).zip(a.tangent.data().chunks(n)) {
            let s: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
            t.extend(yr.iter().zip(dr).map(|(&yv, &dv)| yv * (dv - s)));
        }
        let shape = y.shape().to_vec();
        DualTensor::checked(y, Tensor::from_parts(shape, t), "softmax")
    }

    fn concat(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: k::concat(&a.primal, &b.primal)?,
            tangent: k::concat(&a.tangent, &b.tangent)?,
        })
    }

    fn gather_rows(&mut self, table: &DualTensor, indices: &[usize]) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: k::gather_rows(&table.primal, indices)?,
            tangent: k::gather_rows(&table.tangent, indices)?,
        })
    }

    fn sum(&mut self, a: &DualTensor) -> Result<DualTensor> {
        DualTensor::checked(
            Tensor::scalar(a.primal.sum()),
            Tensor::scalar(a.tangent.sum()),
            "sum",
        )
    }

    fn mean(&mut self, a: &DualTensor) -> Result<DualTensor> {
        let n = a.primal.len() as f64;
        DualTensor::checked(
            Tensor::scalar(a.primal.sum() / n),
            Tensor::scalar(a.tangent.sum() / n),
            "mean",
        )
    }

    fn scale(&mut self, a: &DualTensor, c: f64) -> Result<DualTensor> {
        DualTensor::checked(a.primal.scale(c), a.tangent.scale(c), "scale")
    }

    fn slice(&mut self, flat: &DualTensor, offset: usize, shape: &[usize]) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: k::slice(&flat.primal, offset, shape)?,
            tangent: k::slice(&flat.tangent, offset, shape)?,
        })
    }
}
