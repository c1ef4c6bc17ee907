//! Reference computations for the meta-gradient: dense mixed Hessians and
//! brute-force differentiation of the unrolled inner loop.

use super::{InnerProblem, MetaGradient, MetaMethod, OuterObjective};
use crate::autodiff::{self, kernels, Program, Stencil, Tensor};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::{StudentLogProbs, StudentSpec, TeacherProbs, TeacherSpec};
use crate::objectives::soft_ce_lower_grad;
use crate::par;

/// Largest `|w| · |α|` a dense mixed Hessian may have.
pub const MIXED_HESSIAN_LIMIT: usize = 1_000_000;

/// Longest window the unrolled oracle accepts.
pub const UNROLL_LIMIT: usize = 8;

fn guard(w: usize, a: usize) -> Result<()> {
    let size = w.saturating_mul(a);
    if size > MIXED_HESSIAN_LIMIT {
        return Err(Error::SizeGuard {
            what: "|w|·|α|",
            size,
            limit: MIXED_HESSIAN_LIMIT,
        });
    }
    Ok(())
}

fn single(x: &[f64], label: usize) -> Result<Batch> {
    Ok(Batch {
        x: Tensor::matrix(1, x.len(), x.to_vec())?,
        labels: vec![label],
    })
}

/// Dense `[C, n]` Jacobian of the first output row of `program`, built
/// from one VJP per class.
fn jacobian_rows<P: Program>(program: &P, input: &Tensor, classes: usize) -> Result<Tensor> {
    let (outs, record) = autodiff::evaluate(program, std::slice::from_ref(input))?;
    let mut rows = Vec::with_capacity(classes * input.len());
    for c in 0..classes {
        let mut cots: Vec<Tensor> = outs.iter().map(Tensor::zeros_like).collect();
        cots[0].data_mut()[c] = 1.0;
        rows.extend_from_slice(autodiff::vjp(&record, &cots)?[0].data());
    }
    Tensor::matrix(classes, input.len(), rows)
}

/// `−J_wᵀ J_α` for `J_w: [C, |w|]`, `J_α: [C, |α|]`.
pub fn mixed_hessian_from_jacobians(j_w: &Tensor, j_alpha: &Tensor) -> Result<Tensor> {
    if j_w.rows() != j_alpha.rows() {
        return Err(Error::ShapeMismatch {
            op: "mixed_hessian",
            expected: vec![j_w.rows()],
            found: vec![j_alpha.rows()],
        });
    }
    Ok(kernels::matmul_tn(j_w, j_alpha).scale(-1.0))
}

/// Sample-wise mixed Hessian `∇_wα CE(q_α(·|x, ỹ), p_w(·|x))` as the
/// product `−J_w(log p_w)ᵀ J_α(q_α)`, shape `[|w|, |α|]`.
pub fn mixed_hessian_dense(
    student: &StudentSpec,
    teacher: &TeacherSpec,
    w: &Tensor,
    alpha: &Tensor,
    x: &[f64],
    label: usize,
) -> Result<Tensor> {
    guard(w.len(), alpha.len())?;
    let b = single(x, label)?;
    let classes = student.classes();
    let j_w = jacobian_rows(
        &StudentLogProbs {
            spec: student,
            x: &b.x,
        },
        w,
        classes,
    )?;
    let j_a = jacobian_rows(
        &TeacherProbs {
            spec: teacher,
            x: &b.x,
            labels: &b.labels,
        },
        alpha,
        classes,
    )?;
    mixed_hessian_from_jacobians(&j_w, &j_a)
}

/// Central finite differences over α of the reverse-mode `∇_w` of the
/// sample loss, shape `[|w|, |α|]`.
pub fn mixed_hessian_fd(
    student: &StudentSpec,
    teacher: &TeacherSpec,
    w: &Tensor,
    alpha: &Tensor,
    x: &[f64],
    label: usize,
    step: f64,
) -> Result<Tensor> {
    guard(w.len(), alpha.len())?;
    let b = single(x, label)?;
    let grad_w = |a: &Tensor| soft_ce_lower_grad(student, teacher, w, a, &b).map(|r| r.1);
    let cols = par::try_map_range(alpha.len(), |j| {
        let mut plus = alpha.clone();
        plus.data_mut()[j] += step;
        let mut minus = alpha.clone();
        minus.data_mut()[j] -= step;
        let (gp, gm) = (grad_w(&plus)?, grad_w(&minus)?);
        gp.zip_map(&gm, |p, m| (p - m) / (2.0 * step))
    })?;
    let (nw, na) = (w.len(), alpha.len());
    let mut data = vec![0.0; nw * na];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.data().iter().enumerate() {
            data[i * na + j] = *v;
        }
    }
    Tensor::matrix(nw, na, data)
}

/// Replay the inner SGD steps from `w_start` on `batches` and return the
/// final student parameters.
pub fn unroll<P: InnerProblem + ?Sized>(
    problem: &P,
    w_start: &Tensor,
    alpha: &Tensor,
    batches: &[Vec<usize>],
    lr_inner: f64,
) -> Result<Tensor> {
    let mut w = w_start.clone();
    for b in batches {
        w = super::inner_step(problem, &w, alpha, b, lr_inner)?;
    }
    Ok(w)
}

/// Exact `dL(w^(t+1)(α))/dα` through the full unrolled recursion, by
/// five-point finite differences over every coordinate of α. The starting
/// parameters `w_start` are held fixed.
pub fn unrolled_oracle<P, O>(
    problem: &P,
    outer: &O,
    w_start: &Tensor,
    alpha: &Tensor,
    batches: &[Vec<usize>],
    lr_inner: f64,
    step: f64,
) -> Result<MetaGradient>
where
    P: InnerProblem + ?Sized,
    O: OuterObjective + ?Sized,
{
    if batches.is_empty() || batches.len() > UNROLL_LIMIT {
        return Err(Error::SizeGuard {
            what: "unrolled steps",
            size: batches.len(),
            limit: UNROLL_LIMIT,
        });
    }
    guard(problem.student_len(), problem.teacher_len())?;
    let objective = |a: &Tensor| outer.loss(&unroll(problem, w_start, a, batches, lr_inner)?);
    let grad = autodiff::finite_diff_grad_with(objective, alpha, step, Stencil::FivePoint)?;
    Ok(MetaGradient {
        grad,
        method: MetaMethod::UnrolledOracle,
    })
}
