use super::{InnerProblem, OuterObjective};
use crate::autodiff::{self, Tensor};
use crate::data::{Batch, NoisySet};
use crate::error::Result;
use crate::models::{ModelSpec, StudentLogProbs, StudentSpec, TeacherProbs, TeacherSpec};
use crate::objectives::{clean_meta_grad, clean_meta_loss, soft_ce_lower_grad, soft_ce_lower_loss};

/// The student/teacher lower problem over a noisy dataset.
pub struct EmlcProblem<'a> {
    pub student: &'a StudentSpec,
    pub teacher: &'a TeacherSpec,
    pub noisy: &'a NoisySet,
}

impl EmlcProblem<'_> {
    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        self.noisy.batch(indices)
    }
}

impl InnerProblem for EmlcProblem<'_> {
    fn student_len(&self) -> usize {
        self.student.param_count()
    }

    fn teacher_len(&self) -> usize {
        self.teacher.param_count()
    }

    fn inner_loss(&self, w: &Tensor, alpha: &Tensor, batch: &[usize]) -> Result<f64> {
        soft_ce_lower_loss(self.student, self.teacher, w, alpha, &self.batch(batch)?)
    }

    fn inner_grad(&self, w: &Tensor, alpha: &Tensor, batch: &[usize]) -> Result<Tensor> {
        Ok(soft_ce_lower_grad(self.student, self.teacher, w, alpha, &self.batch(batch)?)?.1)
    }

    /// One taped teacher forward, one student JVP with tangent `g_w`, and
    /// one VJP of the teacher with the JVP as cotangent.
    fn contract(
        &self,
        w: &Tensor,
        alpha: &Tensor,
        batch: &[usize],
        g_w: &Tensor,
    ) -> Result<Tensor> {
        let b = self.batch(batch)?;
        let teacher = TeacherProbs {
            spec: self.teacher,
            x: &b.x,
            labels: &b.labels,
        };
        let (outs, record) = autodiff::evaluate(&teacher, std::slice::from_ref(alpha))?;
        let student = StudentLogProbs {
            spec: self.student,
            x: &b.x,
        };
        let (_, mut jv) =
            autodiff::jvp(&student, std::slice::from_ref(w), std::slice::from_ref(g_w))?;
        let cot = jv.remove(0).scale(1.0 / b.len() as f64);
        let mut grads = autodiff::vjp(&record, &[cot, outs[1].zeros_like()])?;
        Ok(grads.remove(0))
    }
}

/// Mean hard-label CE of the student on a fixed clean batch.
pub struct CleanObjective<'a> {
    pub student: &'a StudentSpec,
    pub batch: Batch,
}

impl OuterObjective for CleanObjective<'_> {
    fn loss(&self, w: &Tensor) -> Result<f64> {
        clean_meta_loss(self.student, w, &self.batch)
    }

    fn grad(&self, w: &Tensor) -> Result<Tensor> {
        Ok(clean_meta_grad(self.student, w, &self.batch)?.1)
    }
}
