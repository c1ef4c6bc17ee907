//! Gradient checks run by `verify-gradients` and the acceptance tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{self, Tensor};
use crate::bilevel::surrogate::{QuadraticInner, QuadraticOuter};
use crate::bilevel::{
    clean_feedback_grad, fpmg, inner_step, mixed_hessian_dense, mixed_hessian_fd,
    one_step_meta_grad, unrolled_oracle, BilevelConfig, CleanObjective, EmlcProblem, InnerProblem,
    OuterObjective, SnapshotBuffer,
};
use crate::data::{gen_blobs, BatchSampler, DatasetPair, NoiseSpec};
use crate::error::{Error, Result};
use crate::models::{init_params, Activation, StudentLogProbs, StudentSpec, TeacherSpec};

/// Step of the central-difference mixed Hessian.
pub const HESSIAN_FD_STEP: f64 = 1e-4;
/// Step of the five-point unrolled oracle on the networks.
pub const ORACLE_FD_STEP: f64 = 1e-3;
/// Step of the five-point unrolled oracle on the quadratic surrogate.
pub const QUADRATIC_FD_STEP: f64 = 1e-2;

const FIXTURE_BATCH: usize = 8;

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    /// The measured quantity (an error, or a count).
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn below(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        Check {
            name,
            value,
            threshold,
            passed: value < threshold,
            detail,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<4} {:<22} {:>12.3e}  (limit {:.0e})  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

/// Model sizes for the checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteSize {
    Tiny,
    Small,
}

impl std::str::FromStr for SuiteSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(SuiteSize::Tiny),
            "small" => Ok(SuiteSize::Small),
            other => Err(Error::InvalidArgument(format!(
                "unknown suite size `{other}`"
            ))),
        }
    }
}

/// Student, teacher, and data shared by the network checks.
pub struct Fixture {
    pub student: StudentSpec,
    pub teacher: TeacherSpec,
    pub pair: DatasetPair,
}

impl Fixture {
    /// Student `2 → 8 → 4`; teacher with 8 features, embedding 8, gate 8.
    pub fn tiny() -> Self {
        Self::with_width(8)
    }

    pub fn small() -> Self {
        Self::with_width(16)
    }

    pub fn of_size(size: SuiteSize) -> Self {
        match size {
            SuiteSize::Tiny => Self::tiny(),
            SuiteSize::Small => Self::small(),
        }
    }

    fn with_width(h: usize) -> Self {
        let student = StudentSpec::new(vec![2, h, 4], Activation::Tanh).expect("valid");
        let teacher = TeacherSpec::new(2, vec![h], 4, 8, h, Activation::Tanh).expect("valid");
        let pool = gen_blobs(4, 2, 60, 0.7, 1).expect("valid");
        let pair =
            DatasetPair::split(&pool, 4, 20, 200, &NoiseSpec::symmetric(0.5), 2).expect("valid");
        Fixture {
            student,
            teacher,
            pair,
        }
    }

    pub fn problem(&self) -> EmlcProblem<'_> {
        EmlcProblem {
            student: &self.student,
            teacher: &self.teacher,
            noisy: &self.pair.noisy,
        }
    }

    pub fn params(&self, seed: u64) -> (Tensor, Tensor) {
        (
            init_params(&self.student, seed.wrapping_mul(2)),
            init_params(&self.teacher, seed.wrapping_mul(2) + 1),
        )
    }

    pub fn outer(&self) -> CleanObjective<'_> {
        CleanObjective {
            student: &self.student,
            batch: self.pair.clean.full_batch().expect("nonempty"),
        }
    }

    /// `k` noisy batches drawn with `seed`.
    pub fn batches(&self, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        let mut s = BatchSampler::new(seed);
        (0..k)
            .map(|_| s.sample(self.pair.noisy.len(), FIXTURE_BATCH))
            .collect()
    }
}

/// Largest `max|dense − fd| / max|fd|` over `pairs` (seed, sample) draws.
pub fn mixed_hessian_error(fx: &Fixture, pairs: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..pairs {
        let (w, a) = fx.params(s as u64 + 100);
        let e = &fx.pair.noisy.examples[(s * 37) % fx.pair.noisy.len()];
        let dense = mixed_hessian_dense(&fx.student, &fx.teacher, &w, &a, &e.x, e.observed)?;
        let fd = mixed_hessian_fd(
            &fx.student,
            &fx.teacher,
            &w,
            &a,
            &e.x,
            e.observed,
            HESSIAN_FD_STEP,
        )?;
        let diff = dense.zip_map(&fd, |x, y| x - y)?;
        worst = worst.max(diff.max_abs() / fd.max_abs());
    }
    Ok(worst)
}

/// Run `k` inner steps and return `(window, clean feedback gradient)`.
fn window_after<P: InnerProblem, O: OuterObjective>(
    problem: &P,
    outer: &O,
    w: &Tensor,
    alpha: &Tensor,
    batches: &[Vec<usize>],
    lr: f64,
) -> Result<(SnapshotBuffer, Tensor)> {
    let mut window = SnapshotBuffer::new(batches.len(), w.clone());
    for b in batches {
        let next = inner_step(problem, window.head(), alpha, b, lr)?;
        window.advance(b.clone(), next);
    }
    let g = clean_feedback_grad(outer, window.head())?;
    Ok((window, g))
}

fn config(k: usize, lr_inner: f64) -> BilevelConfig {
    BilevelConfig {
        k,
        lr_inner,
        lr_meta: 0.0,
        steps: k,
        noisy_batch: FIXTURE_BATCH,
        clean_batch: 1,
    }
}

/// Relative L2 error of the windowed meta-gradient against the unrolled
/// oracle from the same start.
pub fn window_error(fx: &Fixture, seed: u64, k: usize, lr_inner: f64) -> Result<f64> {
    let problem = fx.problem();
    let outer = fx.outer();
    let (w, a) = fx.params(seed);
    let batches = fx.batches(k, seed + 7)?;
    let (window, g) = window_after(&problem, &outer, &w, &a, &batches, lr_inner)?;
    let (meta, _) = fpmg(&problem, &window, &a, &g, &config(k, lr_inner))?;
    let oracle = unrolled_oracle(&problem, &outer, &w, &a, &batches, lr_inner, ORACLE_FD_STEP)?;
    Ok(meta.grad.rel_error(&oracle.grad))
}

/// Largest one-step error over `seeds` seeds.
pub fn one_step_error(fx: &Fixture, seeds: usize, lr_inner: f64) -> Result<f64> {
    let problem = fx.problem();
    let outer = fx.outer();
    let mut worst: f64 = 0.0;
    for s in 0..seeds as u64 {
        let (w, a) = fx.params(s);
        let batch = fx.batches(1, s + 7)?;
        let w1 = inner_step(&problem, &w, &a, &batch[0], lr_inner)?;
        let g = clean_feedback_grad(&outer, &w1)?;
        let exact = one_step_meta_grad(&problem, &w, &w1, &a, &batch[0], &g, lr_inner)?;
        let oracle = unrolled_oracle(&problem, &outer, &w, &a, &batch, lr_inner, ORACLE_FD_STEP)?;
        worst = worst.max(exact.grad.rel_error(&oracle.grad));
    }
    Ok(worst)
}

fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// Error of the windowed meta-gradient on `½‖w‖² + wᵀBα`, where it is exact.
pub fn quadratic_error(k: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nw, na) = (6, 4);
    let inner = QuadraticInner::new(gaussian(&[nw, na], &mut rng).scale(0.5));
    let outer = QuadraticOuter {
        target: gaussian(&[nw], &mut rng),
    };
    let w = gaussian(&[nw], &mut rng);
    let a = gaussian(&[na], &mut rng);
    let batches: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    let lr = 0.1;
    let (window, g) = window_after(&inner, &outer, &w, &a, &batches, lr)?;
    let (meta, _) = fpmg(&inner, &window, &a, &g, &config(k, lr))?;
    let oracle = unrolled_oracle(&inner, &outer, &w, &a, &batches, lr, QUADRATIC_FD_STEP)?;
    Ok(meta.grad.rel_error(&oracle.grad))
}

/// Passes per window step and peak retained snapshots of one meta-gradient.
pub fn cost_profile(fx: &Fixture, k: usize) -> Result<(usize, usize)> {
    let problem = fx.problem();
    let outer = fx.outer();
    let (w, a) = fx.params(3);
    let batches = fx.batches(k, 11)?;
    let (window, g) = window_after(&problem, &outer, &w, &a, &batches, 0.1)?;
    let (_, stats) = fpmg(&problem, &window, &a, &g, &config(k, 0.1))?;
    Ok((stats.max_passes_per_step(), window.peak_retained()))
}

/// `|⟨u, Jv⟩ − ⟨Jᵀu, v⟩|` relative to the larger of the two, for the
/// student log-probabilities.
pub fn duality_gap(fx: &Fixture, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, _) = fx.params(seed);
    let b = fx
        .pair
        .noisy
        .batch(&(0..FIXTURE_BATCH).collect::<Vec<_>>())?;
    let program = StudentLogProbs {
        spec: &fx.student,
        x: &b.x,
    };
    let v = gaussian(w.shape(), &mut rng);
    let (outs, jv) = autodiff::jvp(&program, std::slice::from_ref(&w), std::slice::from_ref(&v))?;
    let u = gaussian(outs[0].shape(), &mut rng);
    let (_, record) = autodiff::evaluate(&program, std::slice::from_ref(&w))?;
    let jtu = autodiff::vjp(&record, std::slice::from_ref(&u))?;
    let lhs = u.dot(&jv[0])?;
    let rhs = jtu[0].dot(&v)?;
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()))
}

/// Learning rates of the consistency check, largest first.
pub const CONSISTENCY_RATES: [f64; 3] = [0.1, 0.01, 0.001];

/// Window errors at [`CONSISTENCY_RATES`] for `k = 5`.
pub fn consistency_errors(fx: &Fixture, seed: u64) -> Result<Vec<f64>> {
    CONSISTENCY_RATES
        .iter()
        .map(|&lr| window_error(fx, seed, 5, lr))
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.2e}"))
        .collect::<Vec<_>>()
        .join(" > ")
}

/// Every check at the given size.
pub fn run_suite(size: SuiteSize, seeds: usize) -> Result<Vec<Check>> {
    let fx = Fixture::of_size(size);
    let mut out = Vec::new();

    out.push(Check::below(
        "mixed_hessian",
        mixed_hessian_error(&fx, seeds)?,
        1e-5,
        format!("{seeds} samples, dense vs central FD"),
    ));
    out.push(Check::below(
        "one_step_exact",
        one_step_error(&fx, seeds, 0.1)?,
        1e-8,
        format!("{seeds} seeds, k=1 vs unrolled"),
    ));
    let quad = [2usize, 5]
        .iter()
        .map(|&k| quadratic_error(k, k as u64))
        .collect::<Result<Vec<_>>>()?;
    out.push(Check::below(
        "quadratic_exact",
        quad.iter().cloned().fold(0.0, f64::max),
        1e-10,
        "k in {2,5}".into(),
    ));
    let errs = consistency_errors(&fx, 0)?;
    let monotone = errs.windows(2).all(|p| p[1] <= p[0]);
    out.push(Check {
        name: "lr_consistency",
        value: errs[errs.len() - 1],
        threshold: errs[0],
        passed: monotone,
        detail: format!("k=5 errors {}", fmt_list(&errs)),
    });
    let (passes, peak) = cost_profile(&fx, 5)?;
    out.push(Check {
        name: "cost_discipline",
        value: passes as f64,
        threshold: 3.0,
        passed: passes <= 3 && peak == 6,
        detail: format!("{passes} passes per step, {peak} snapshots for k=5"),
    });
    let gap = (0..seeds as u64)
        .map(|s| duality_gap(&fx, s))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.push(Check::below(
        "jvp_vjp_duality",
        gap,
        1e-12,
        format!("{seeds} seeds"),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_closed_form() {
        assert!(quadratic_error(2, 0).unwrap() < 1e-10);
    }

    #[test]
    fn tiny_costs() {
        let (passes, peak) = cost_profile(&Fixture::tiny(), 3).unwrap();
        assert!(passes <= 3);
        assert_eq!(peak, 4);
    }

    #[test]
    fn size_parses() {
        assert_eq!("tiny".parse::<SuiteSize>().unwrap(), SuiteSize::Tiny);
        assert!("huge".parse::<SuiteSize>().is_err());
    }
}
