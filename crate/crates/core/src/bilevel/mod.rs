//! The bi-level core: inner student SGD steps, the FPMG meta-gradient, and
//! the reference computations it is checked against.
//!
//! The meta-gradient of the clean loss after a window of `k` inner SGD steps
//! is approximated by
//!
//! ```text
//! ∇_α ≈ η_w Σ_τ γ_w^(t−τ) · (1/|B_τ|) Σ_{i∈B_τ} (J_w(i) g_w)ᵀ J_α(i),   γ_w = 1 − η_w
//! ```
//!
//! where `J_w(i)` is the Jacobian of the student's log-probabilities at
//! `w^(τ)` and `J_α(i)` that of the teacher's soft labels. Each term is one
//! JVP through the student followed by one VJP through the teacher, which
//! is exactly `−g_wᵀ H_wα` for the cross-entropy lower loss. For `k = 1` the
//! formula is the exact one-step meta-gradient.

mod audit;
mod emlc;
mod fpmg;
pub mod oracle;
mod snapshot;
pub mod surrogate;

pub use audit::{AuditRow, GradientAudit};
pub use emlc::{CleanObjective, EmlcProblem};
pub use fpmg::{fpmg, one_step_meta_grad, FpmgStats};
pub use oracle::{mixed_hessian_dense, mixed_hessian_fd, unrolled_oracle, MIXED_HESSIAN_LIMIT};
pub use snapshot::SnapshotBuffer;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A lower-level problem `L̃(w, α)` evaluated on index batches.
pub trait InnerProblem: Sync {
    fn student_len(&self) -> usize;
    fn teacher_len(&self) -> usize;

    fn inner_loss(&self, w: &Tensor, alpha: &Tensor, batch: &[usize]) -> Result<f64>;

    /// `∇_w L̃(w, α)` on `batch`.
    fn inner_grad(&self, w: &Tensor, alpha: &Tensor, batch: &[usize]) -> Result<Tensor>;

    /// `−g_wᵀ H_wα` on `batch`, a vector over α.
    fn contract(&self, w: &Tensor, alpha: &Tensor, batch: &[usize], g_w: &Tensor)
        -> Result<Tensor>;
}

/// The upper-level loss `L(w)`.
pub trait OuterObjective: Sync {
    fn loss(&self, w: &Tensor) -> Result<f64>;
    fn grad(&self, w: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BilevelConfig {
    /// Look-ahead window length.
    pub k: usize,
    pub lr_inner: f64,
    pub lr_meta: f64,
    /// Total inner steps.
    pub steps: usize,
    pub noisy_batch: usize,
    pub clean_batch: usize,
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.lr_inner > 0.0 && self.lr_inner < 1.0) {
            return bad(format!(
                "inner learning rate {} not in (0, 1)",
                self.lr_inner
            ));
        }
        if !(self.lr_meta >= 0.0 && self.lr_meta.is_finite()) {
            return bad(format!("meta learning rate {} invalid", self.lr_meta));
        }
        if self.k > self.steps {
            return bad(format!("k = {} exceeds total steps {}", self.k, self.steps));
        }
        if self.noisy_batch == 0 || self.clean_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        Ok(())
    }

    /// `γ_w = 1 − η_w`.
    pub fn gamma(&self) -> f64 {
        1.0 - self.lr_inner
    }

    /// Whether step `t` (0-based) ends a window.
    pub fn is_meta_step(&self, t: usize) -> bool {
        t % self.k == self.k - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaMethod {
    Fpmg,
    OneStep,
    UnrolledOracle,
    FiniteDiff,
}

/// A gradient over the teacher parameters and how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradient {
    pub grad: Tensor,
    pub method: MetaMethod,
}

/// `w − η_w ∇_w L̃(w, α)`.
pub fn inner_step<P: InnerProblem + ?Sized>(
    problem: &P,
    w: &Tensor,
    alpha: &Tensor,
    batch: &[usize],
    lr: f64,
) -> Result<Tensor> {
    let g = problem.inner_grad(w, alpha, batch)?;
    g.check_finite("inner_step gradient")?;
    let mut next = w.clone();
    next.axpy(-lr, &g)?;
    Ok(next)
}

/// `g_w = ∇_w L(w^(t+1))`.
pub fn clean_feedback_grad<O: OuterObjective + ?Sized>(
    outer: &O,
    w_final: &Tensor,
) -> Result<Tensor> {
    outer.grad(w_final)
}

/// `α − η_α · grad`.
pub fn meta_step(alpha: &Tensor, grad: &Tensor, lr: f64) -> Result<Tensor> {
    grad.expect_same_shape(alpha, "meta_step")?;
    let mut next = alpha.clone();
    next.axpy(-lr, grad)?;
    Ok(next)
}
