//! Closed-form problems for checking the meta-gradient machinery.

use super::{InnerProblem, OuterObjective};
use crate::autodiff::{kernels, Tensor};
use crate::error::Result;

/// `L̃(w, α) = ½‖w‖² + wᵀBα`, so `∇_w L̃ = w + Bα`, `H_ww = I` and
/// `H_wα = B`. Batches are ignored.
#[derive(Clone, Debug)]
pub struct QuadraticInner {
    /// `[|w|, |α|]`.
    pub coupling: Tensor,
}

impl QuadraticInner {
    pub fn new(coupling: Tensor) -> Self {
        assert_eq!(coupling.shape().len(), 2, "coupling must be a matrix");
        QuadraticInner { coupling }
    }

    fn b_alpha(&self, alpha: &Tensor) -> Result<Tensor> {
        let a = alpha.clone().reshape(vec![alpha.len(), 1])?;
        let ba = kernels::matmul(&self.coupling, &a)?;
        ba.reshape(vec![self.coupling.shape()[0]])
    }
}

impl InnerProblem for QuadraticInner {
    fn student_len(&self) -> usize {
        self.coupling.shape()[0]
    }

    fn teacher_len(&self) -> usize {
        self.coupling.shape()[1]
    }

    fn inner_loss(&self, w: &Tensor, alpha: &Tensor, _batch: &[usize]) -> Result<f64> {
        Ok(0.5 * w.dot(w)? + w.dot(&self.b_alpha(alpha)?)?)
    }

    fn inner_grad(&self, w: &Tensor, alpha: &Tensor, _batch: &[usize]) -> Result<Tensor> {
        let mut g = w.clone();
        g.axpy(1.0, &self.b_alpha(alpha)?)?;
        Ok(g)
    }

    fn contract(
        &self,
        _w: &Tensor,
        _alpha: &Tensor,
        _batch: &[usize],
        g_w: &Tensor,
    ) -> Result<Tensor> {
        let g = g_w.clone().reshape(vec![g_w.len(), 1])?;
        let bt_g = kernels::matmul_tn(&self.coupling, &g);
        Ok(bt_g.reshape(vec![self.teacher_len()])?.scale(-1.0))
    }
}

/// `L(w) = ½‖w − target‖²`.
#[derive(Clone, Debug)]
pub struct QuadraticOuter {
    pub target: Tensor,
}

impl OuterObjective for QuadraticOuter {
    fn loss(&self, w: &Tensor) -> Result<f64> {
        let d = w.zip_map(&self.target, |a, b| a - b)?;
        Ok(0.5 * d.dot(&d)?)
    }

    fn grad(&self, w: &Tensor) -> Result<Tensor> {
        w.zip_map(&self.target, |a, b| a - b)
    }
}
