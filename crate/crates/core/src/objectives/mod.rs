//! Loss functions: the student's soft-target cross entropy, the clean meta
//! loss, the teacher's supervised cross entropy, and the gate BCE with
//! artificial label corruption.

mod corrupt;

pub use corrupt::{adversarial_label, corrupt_adversarial, corrupt_random, Corruption};

use rand::Rng;

use crate::autodiff::{self, Ops, Program, Tensor};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::{teacher_forward, ModelSpec, StudentSpec, TeacherSpec};

/// How half of each clean batch is corrupted for the gate BCE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorruptionStrategy {
    #[default]
    None,
    Random,
    Adversarial,
}

impl CorruptionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionStrategy::None => "none",
            CorruptionStrategy::Random => "random",
            CorruptionStrategy::Adversarial => "adversarial",
        }
    }
}

impl std::str::FromStr for CorruptionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CorruptionStrategy::None),
            "random" => Ok(CorruptionStrategy::Random),
            "adversarial" => Ok(CorruptionStrategy::Adversarial),
            other => Err(Error::InvalidArgument(format!(
                "unknown corruption strategy {other}"
            ))),
        }
    }
}

/// Coefficients of the teacher objective `ce + bce + meta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub bce: f64,
    pub meta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ce: 1.0,
            bce: 1.0,
            meta: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub ce: f64,
    pub bce: f64,
    pub meta: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(ce: f64, bce: f64, meta: f64, weights: LossWeights) -> Self {
        LossReport {
            ce,
            bce,
            meta,
            total: weights.ce * ce + weights.bce * bce + weights.meta * meta,
        }
    }
}

/// `−(1/B) Σ_i ⟨targets_i, logp_i⟩`.
fn cross_entropy<O: Ops>(
    ops: &mut O,
    targets: &O::Value,
    logp: &O::Value,
    batch: usize,
) -> Result<O::Value> {
    let prod = ops.mul(targets, logp)?;
    let s = ops.sum(&prod)?;
    ops.scale(&s, -1.0 / batch as f64)
}

/// Student CE against fixed soft targets: `w ↦ CE(q, p_w)`.
pub struct SoftTargetCe<'a> {
    pub student: &'a StudentSpec,
    pub x: &'a Tensor,
    pub targets: &'a Tensor,
}

impl Program for SoftTargetCe<'_> {
    fn signature(&self) -> Vec<Vec<usize>> {
        vec![vec![self.student.param_count()]]
    }

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let x = ops.constant(self.x.clone());
        let q = ops.constant(self.targets.clone());
        let logp = self.student.log_probs(ops, &inputs[0], &x)?;
        Ok(vec![cross_entropy(ops, &q, &logp, self.x.rows())?])
    }
}

/// The lower loss with the teacher inside the graph: `(w, α) ↦ CE(q_α, p_w)`.
pub struct JointLowerLoss<'a> {
    pub student: &'a StudentSpec,
    pub teacher: &'a TeacherSpec,
    pub batch: &'a Batch,
}

impl Program for JointLowerLoss<'_> {
    fn signature(&self) -> Vec<Vec<usize>> {
        vec![
            vec![self.student.param_count()],
            vec![self.teacher.param_count()],
        ]
    }

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let x = ops.constant(self.batch.x.clone());
        let q = self
            .teacher
            .graph(ops, &inputs[1], &x, &self.batch.labels)?
            .q;
        let logp = self.student.log_probs(ops, &inputs[0], &x)?;
        Ok(vec![cross_entropy(ops, &q, &logp, self.batch.len())?])
    }
}

/// Hard-label student CE: `w ↦ CE(y, p_w)`.
pub struct HardCe<'a> {
    pub student: &'a StudentSpec,
    pub batch: &'a Batch,
}

impl Program for HardCe<'_> {
    fn signature(&self) -> Vec<Vec<usize>> {
        vec![vec![self.student.param_count()]]
    }

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let x = ops.constant(self.batch.x.clone());
        let y = ops.one_hot(&self.batch.labels, self.student.classes())?;
        let logp = self.student.log_probs(ops, &inputs[0], &x)?;
        Ok(vec![cross_entropy(ops, &y, &logp, self.batch.len())?])
    }
}

/// CE of the teacher's classifier head: `α ↦ CE(y, softmax(classifier(h)))`.
pub struct TeacherCe<'a> {
    pub teacher: &'a TeacherSpec,
    pub batch: &'a Batch,
}

impl Program for TeacherCe<'_> {
    fn signature(&self) -> Vec<Vec<usize>> {
        vec![vec![self.teacher.param_count()]]
    }

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let x = ops.constant(self.batch.x.clone());
        let y = ops.one_hot(&self.batch.labels, self.teacher.classes)?;
        let logits = self.teacher.classifier_logits(ops, &inputs[0], &x)?;
        let logp = ops.log_softmax(&logits)?;
        Ok(vec![cross_entropy(ops, &y, &logp, self.batch.len())?])
    }
}

/// BCE of the gate against a clean/corrupted target:
/// `α ↦ −mean[t log g + (1−t) log(1−g)]`.
///
/// Evaluated from the gate logit as `log_softmax([z, 0])`, whose columns
/// are `log σ(z)` and `log(1 − σ(z))`.
pub struct GateBce<'a> {
    pub teacher: &'a TeacherSpec,
    pub x: &'a Tensor,
    pub labels: &'a [usize],
    /// 1 where the label is clean.
    pub targets: &'a [f64],
}

impl Program for GateBce<'_> {
    fn signature(&self) -> Vec<Vec<usize>> {
        vec![vec![self.teacher.param_count()]]
    }

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let b = self.labels.len();
        let x = ops.constant(self.x.clone());
        let z = self
            .teacher
            .graph(ops, &inputs[0], &x, self.labels)?
            .gate_logit;
        let zeros = ops.constant(Tensor::zeros(&[b, 1]));
        let pair = ops.concat(&z, &zeros)?;
        let logs = ops.log_softmax(&pair)?;
        let t: Vec<f64> = self.targets.iter().flat_map(|&t| [t, 1.0 - t]).collect();
        let t = ops.constant(Tensor::matrix(b, 2, t)?);
        Ok(vec![cross_entropy(ops, &t, &logs, b)?])
    }
}

fn scalar_and_grad<P: Program>(program: &P, input: &Tensor) -> Result<(f64, Tensor)> {
    let (v, mut g) = autodiff::grad(program, std::slice::from_ref(input))?;
    Ok((v, g.remove(0)))
}

fn nonempty(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        Err(Error::InvalidArgument("empty batch".into()))
    } else {
        Ok(())
    }
}

/// `(1/B) Σ_i CE(q_α(·|x_i, ỹ_i), p_w(·|x_i))`.
pub fn soft_ce_lower_loss(
    student: &StudentSpec,
    teacher: &TeacherSpec,
    w: &Tensor,
    alpha: &Tensor,
    batch: &Batch,
) -> Result<f64> {
    Ok(soft_ce_lower_grad(student, teacher, w, alpha, batch)?.0)
}

/// Lower loss and its gradient in `w`, with the teacher's soft labels
/// evaluated first and held constant.
pub fn soft_ce_lower_grad(
    student: &StudentSpec,
    teacher: &TeacherSpec,
    w: &Tensor,
    alpha: &Tensor,
    batch: &Batch,
) -> Result<(f64, Tensor)> {
    nonempty(batch)?;
    let q = teacher_forward(teacher, alpha, &batch.x, &batch.labels)?.q;
    soft_ce_with_targets(student, w, &batch.x, &q)
}

pub fn soft_ce_with_targets(
    student: &StudentSpec,
    w: &Tensor,
    x: &Tensor,
    targets: &Tensor,
) -> Result<(f64, Tensor)> {
    targets.expect_shape(&[x.rows(), student.classes()], "soft targets")?;
    scalar_and_grad(
        &SoftTargetCe {
            student,
            x,
            targets,
        },
        w,
    )
}

/// Mean hard-label CE of the student on clean examples.
pub fn clean_meta_loss(student: &StudentSpec, w: &Tensor, batch: &Batch) -> Result<f64> {
    nonempty(batch)?;
    Ok(autodiff::forward(&HardCe { student, batch }, std::slice::from_ref(w))?[0].item())
}

pub fn clean_meta_grad(student: &StudentSpec, w: &Tensor, batch: &Batch) -> Result<(f64, Tensor)> {
    nonempty(batch)?;
    scalar_and_grad(&HardCe { student, batch }, w)
}

/// Supervised CE of the teacher's classifier head on clean data. The label
/// embedding and gate do not participate, so their gradient is zero.
pub fn teacher_ce_loss(teacher: &TeacherSpec, alpha: &Tensor, batch: &Batch) -> Result<f64> {
    nonempty(batch)?;
    Ok(autodiff::forward(&TeacherCe { teacher, batch }, std::slice::from_ref(alpha))?[0].item())
}

pub fn teacher_ce_grad(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    batch: &Batch,
) -> Result<(f64, Tensor)> {
    nonempty(batch)?;
    scalar_and_grad(&TeacherCe { teacher, batch }, alpha)
}

/// Corrupt half of `batch` with `strategy`.
pub fn corrupt_batch<R: Rng + ?Sized>(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    batch: &Batch,
    strategy: CorruptionStrategy,
    rng: &mut R,
) -> Result<Corruption> {
    match strategy {
        CorruptionStrategy::None => Err(Error::InvalidArgument(
            "gate BCE needs a corruption strategy".into(),
        )),
        CorruptionStrategy::Random => corrupt_random(&batch.labels, teacher.classes, rng),
        CorruptionStrategy::Adversarial => corrupt_adversarial(teacher, alpha, batch, rng),
    }
}

/// Gate BCE on a batch whose labels have already been corrupted.
pub fn gate_bce_on(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    batch: &Batch,
    corruption: &Corruption,
) -> Result<(f64, Tensor)> {
    let targets = corruption.targets(&batch.labels);
    scalar_and_grad(
        &GateBce {
            teacher,
            x: &batch.x,
            labels: &corruption.labels,
            targets: &targets,
        },
        alpha,
    )
}

pub fn gate_bce_loss<R: Rng + ?Sized>(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    batch: &Batch,
    strategy: CorruptionStrategy,
    rng: &mut R,
) -> Result<f64> {
    Ok(gate_bce_grad(teacher, alpha, batch, strategy, rng)?.0)
}

pub fn gate_bce_grad<R: Rng + ?Sized>(
    teacher: &TeacherSpec,
    alpha: &Tensor,
    batch: &Batch,
    strategy: CorruptionStrategy,
    rng: &mut R,
) -> Result<(f64, Tensor)> {
    let corruption = corrupt_batch(teacher, alpha, batch, strategy, rng)?;
    gate_bce_on(teacher, alpha, batch, &corruption)
}

/// The teacher objective on one clean batch.
///
/// Returns the loss report and the gradient of the supervised part
/// (`ce + bce`, weighted). The meta term enters the report as the clean
/// loss of `w_star`; its gradient comes from the meta-gradient routine.
#[allow(clippy::too_many_arguments)]
pub fn teacher_total_loss<R: Rng + ?Sized>(
    student: &StudentSpec,
    teacher: &TeacherSpec,
    alpha: &Tensor,
    w_star: &Tensor,
    batch: &Batch,
    strategy: CorruptionStrategy,
    weights: LossWeights,
    rng: &mut R,
) -> Result<(LossReport, Tensor)> {
    let (ce, mut grad) = teacher_ce_grad(teacher, alpha, batch)?;
    grad = grad.scale(weights.ce);
    let bce = if strategy == CorruptionStrategy::None {
        0.0
    } else {
        let (bce, g) = gate_bce_grad(teacher, alpha, batch, strategy, rng)?;
        grad.axpy(weights.bce, &g)?;
        bce
    };
    let meta = clean_meta_loss(student, w_star, batch)?;
    Ok((LossReport::new(ce, bce, meta, weights), grad))
}
