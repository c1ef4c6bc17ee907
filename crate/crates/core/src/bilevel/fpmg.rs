use super::{BilevelConfig, InnerProblem, MetaGradient, MetaMethod, SnapshotBuffer};
use crate::autodiff::{count_passes, PassCounts, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Cost accounting for one [`fpmg`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FpmgStats {
    /// Passes spent on each window step, newest first.
    pub passes: Vec<PassCounts>,
    /// Student parameter copies held by the window.
    pub retained_snapshots: usize,
}

impl FpmgStats {
    pub fn max_passes_per_step(&self) -> usize {
        self.passes.iter().map(PassCounts::total).max().unwrap_or(0)
    }
}

/// Fast and precise meta-gradient over a complete snapshot window.
///
/// For each window step τ, newest to oldest, the contraction
/// `(1/|B_τ|) Σ_i (J_{w^(τ)}(i) g_w)ᵀ J_α(i)` is accumulated with weight
/// `d · η_w`, where `d` starts at 1 and is multiplied by `γ_w` per older step.
/// The result is the gradient to descend.
pub fn fpmg<P: InnerProblem + ?Sized>(
    problem: &P,
    snapshots: &SnapshotBuffer,
    alpha: &Tensor,
    g_w: &Tensor,
    config: &BilevelConfig,
) -> Result<(MetaGradient, FpmgStats)> {
    if !snapshots.is_complete() || snapshots.k() != config.k {
        return Err(Error::IncompleteWindow {
            have: snapshots.len(),
            need: config.k,
        });
    }
    alpha.expect_shape(&[problem.teacher_len()], "fpmg alpha")?;
    g_w.expect_shape(&[problem.student_len()], "fpmg g_w")?;

    let steps = snapshots.steps();
    let contributions = par::try_map_range(steps.len(), |j| {
        // newest first
        let (w_tau, batch) = &steps[steps.len() - 1 - j];
        let (res, passes) = count_passes(|| problem.contract(w_tau, alpha, batch, g_w));
        res.map(|r| (r, passes))
    })?;

    let mut grad = Tensor::zeros(&[problem.teacher_len()]);
    let mut discount = 1.0;
    let mut passes = Vec::with_capacity(contributions.len());
    for (contrib, p) in contributions {
        grad.axpy(discount * config.lr_inner, &contrib)?;
        discount *= config.gamma();
        passes.push(p);
    }
    grad.check_finite("fpmg")?;
    Ok((
        MetaGradient {
            grad,
            method: MetaMethod::Fpmg,
        },
        FpmgStats {
            passes,
            retained_snapshots: snapshots.retained(),
        },
    ))
}

/// Exact one-step meta-gradient `−η_w g_wᵀ H_wα` at `(w_t, α)`, where
/// `w_t1` is the result of one inner step from `w_t` on `batch`.
pub fn one_step_meta_grad<P: InnerProblem + ?Sized>(
    problem: &P,
    w_t: &Tensor,
    w_t1: &Tensor,
    alpha: &Tensor,
    batch: &[usize],
    g_w: &Tensor,
    lr_inner: f64,
) -> Result<MetaGradient> {
    let mut window = SnapshotBuffer::new(1, w_t.clone());
    window.advance(batch.to_vec(), w_t1.clone());
    let config = BilevelConfig {
        k: 1,
        lr_inner,
        lr_meta: 0.0,
        steps: 1,
        noisy_batch: batch.len().max(1),
        clean_batch: 1,
    };
    let (mut mg, _) = fpmg(problem, &window, alpha, g_w, &config)?;
    mg.method = MetaMethod::OneStep;
    Ok(mg)
}
