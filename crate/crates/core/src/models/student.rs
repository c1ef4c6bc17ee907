use super::{affine, check_widths, push_affine, Activation, ModelSpec, ParamLayout};
use crate::autodiff::{self, Ops, Program, Tensor};
use crate::error::{Error, Result};

/// MLP `d → hidden… → C` ending in log-softmax.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudentSpec {
    /// `[d, h1, …, C]`.
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl StudentSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "student needs at least input and output widths".into(),
            ));
        }
        check_widths("student", &widths)?;
        if widths[widths.len() - 1] < 2 {
            return Err(Error::InvalidArgument(
                "student needs at least 2 classes".into(),
            ));
        }
        Ok(StudentSpec { widths, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Log-probabilities `[batch, C]` for a constant input batch.
    pub fn log_probs<O: Ops>(&self, ops: &mut O, w: &O::Value, x: &O::Value) -> Result<O::Value> {
        let logits = self.logits(ops, w, x)?;
        ops.log_softmax(&logits)
    }

    pub fn logits<O: Ops>(&self, ops: &mut O, w: &O::Value, x: &O::Value) -> Result<O::Value> {
        let layout = self.layout();
        let mut h = x.clone();
        for l in 0..self.layers() {
            h = affine(ops, w, &layout, &format!("layer{l}"), &h)?;
            if l + 1 < self.layers() {
                h = self.activation.apply(ops, &h)?;
            }
        }
        Ok(h)
    }

    pub(crate) fn check_batch(&self, x: &Tensor) -> Result<()> {
        match x.shape() {
            [_, d] if *d == self.input_dim() => Ok(()),
            other => Err(Error::ShapeMismatch {
                op: "student input",
                expected: vec![0, self.input_dim()],
                found: other.to_vec(),
            }),
        }
    }
}

impl ModelSpec for StudentSpec {
    fn layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::new();
        for l in 0..self.layers() {
            push_affine(
                &mut layout,
                &format!("layer{l}"),
                self.widths[l],
                self.widths[l + 1],
            );
        }
        layout
    }

    fn describe(&self) -> String {
        format!(
            "student widths={:?} activation={}",
            self.widths,
            self.activation.name()
        )
    }
}

/// `w ↦ log p_w(y | x)` for a fixed batch `x`.
pub struct StudentLogProbs<'a> {
    pub spec: &'a StudentSpec,
    pub x: &'a Tensor,
}

impl Program for StudentLogProbs<'_> {
    fn signature(&self) -> Vec<Vec<usize>> {
        vec![vec![self.spec.param_count()]]
    }

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let x = ops.constant(self.x.clone());
        Ok(vec![self.spec.log_probs(ops, &inputs[0], &x)?])
    }
}

/// Log-probabilities `[batch, C]`; every row has `logsumexp == 0`.
pub fn student_forward(spec: &StudentSpec, w: &Tensor, x: &Tensor) -> Result<Tensor> {
    spec.check_batch(x)?;
    let mut out = autodiff::forward(&StudentLogProbs { spec, x }, std::slice::from_ref(w))?;
    Ok(out.remove(0))
}
