use super::{affine, check_widths, push_affine, Activation, ModelSpec, ParamLayout};
use crate::autodiff::{self, Ops, Program, Tensor};
use crate::error::{Error, Result};

/// Label-correcting teacher.
///
/// The input goes through its own feature extractor to a representation
/// `h`, and a linear classifier turns `h` into an initial prediction
/// `softmax(classifier(h))`. The observed label is embedded as `z`, and a
/// one-hidden-layer gate MLP on `[h, z]` emits `g ∈ (0,1)`. The output is
/// `q = g · onehot(ỹ) + (1 − g) · softmax(classifier(h))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TeacherSpec {
    pub input_dim: usize,
    /// Feature extractor widths after the input, ending at the feature dim.
    pub feature_widths: Vec<usize>,
    pub classes: usize,
    pub embed_dim: usize,
    pub gate_hidden: usize,
    pub activation: Activation,
}

impl TeacherSpec {
    pub fn new(
        input_dim: usize,
        feature_widths: Vec<usize>,
        classes: usize,
        embed_dim: usize,
        gate_hidden: usize,
        activation: Activation,
    ) -> Result<Self> {
        if feature_widths.is_empty() {
            return Err(Error::InvalidArgument(
                "teacher needs at least one feature layer".into(),
            ));
        }
        check_widths("teacher feature", &feature_widths)?;
        check_widths("teacher", &[input_dim, embed_dim, gate_hidden])?;
        if classes < 2 {
            return Err(Error::InvalidArgument(
                "teacher needs at least 2 classes".into(),
            ));
        }
        Ok(TeacherSpec {
            input_dim,
            feature_widths,
            classes,
            embed_dim,
            gate_hidden,
            activation,
        })
    }

    pub fn feature_dim(&self) -> usize {
        *self.feature_widths.last().expect("validated")
    }

    fn check_inputs(&self, x: &Tensor, labels: &[usize]) -> Result<()> {
        match x.shape() {
            [b, d] if *d == self.input_dim && *b == labels.len() => {}
            other => {
                return Err(Error::ShapeMismatch {
                    op: "teacher input",
                    expected: vec![labels.len(), self.input_dim],
                    found: other.to_vec(),
                })
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Feature representation `h`.
    pub fn features<O: Ops>(
        &self,
        ops: &mut O,
        alpha: &O::Value,
        x: &O::Value,
    ) -> Result<O::Value> {
        let layout = self.layout();
        let mut h = x.clone();
        for l in 0..self.feature_widths.len() {
            h = affine(ops, alpha, &layout, &format!("feature.{l}"), &h)?;
            h = self.activation.apply(ops, &h)?;
        }
        Ok(h)
    }

    /// Classifier-head logits from the feature extractor.
    pub fn classifier_logits<O: Ops>(
        &self,
        ops: &mut O,
        alpha: &O::Value,
        x: &O::Value,
    ) -> Result<O::Value> {
        let h = self.features(ops, alpha, x)?;
        affine(ops, alpha, &self.layout(), "classifier", &h)
    }

    /// Build the full teacher graph.
    pub fn graph<O: Ops>(
        &self,
        ops: &mut O,
        alpha: &O::Value,
        x: &O::Value,
        labels: &[usize],
    ) -> Result<TeacherGraph<O::Value>> {
        let layout = self.layout();
        let h = self.features(ops, alpha, x)?;
        let logits = affine(ops, alpha, &layout, "classifier", &h)?;
        let probs = ops.softmax(&logits)?;

        let table = layout.expect("embed.table");
        let table = ops.slice(alpha, table.offset, &table.shape)?;
        let z = ops.gather_rows(&table, labels)?;
        let hz = ops.concat(&h, &z)?;
        let hidden = affine(ops, alpha, &layout, "gate.hidden", &hz)?;
        let hidden = self.activation.apply(ops, &hidden)?;
        let gate_logit = affine(ops, alpha, &layout, "gate.out", &hidden)?;
        let gate = ops.sigmoid(&gate_logit)?;

        // q = p + g ⊙ (onehot − p)
        let onehot = ops.one_hot(labels, self.classes)?;
        let neg_p = ops.scale(&probs, -1.0)?;
        let diff = ops.add(&onehot, &neg_p)?;
        let gated = ops.mul(&diff, &gate)?;
        let q = ops.add(&probs, &gated)?;
        Ok(TeacherGraph {
            q,
            gate,
            gate_logit,
            classifier_logits: logits,
            classifier_probs: probs,
        })
    }
}

/// Intermediate values of one teacher evaluation.
pub struct TeacherGraph<V> {
    /// Corrected soft labels `[batch, C]`.
    pub q: V,
    /// `[batch, 1]`.
    pub gate: V,
    /// `[batch, 1]` pre-sigmoid gate.
    pub gate_logit: V,
    pub classifier_logits: V,
    pub classifier_probs: V,
}

impl ModelSpec for TeacherSpec {
    fn layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::new();
        let mut fan_in = self.input_dim;
        for (l, &w) in self.feature_widths.iter().enumerate() {
            push_affine(&mut layout, &format!("feature.{l}"), fan_in, w);
            fan_in = w;
        }
        push_affine(&mut layout, "classifier", self.feature_dim(), self.classes);
        layout.push("embed.table", vec![self.classes, self.embed_dim]);
        push_affine(
            &mut layout,
            "gate.hidden",
            self.feature_dim() + self.embed_dim,
            self.gate_hidden,
        );
        push_affine(&mut layout, "gate.out", self.gate_hidden, 1);
        layout
    }

    fn describe(&self) -> String {
        format!(
            "teacher input={} features={:?} classes={} embed={} gate_hidden={} activation={}",
            self.input_dim,
            self.feature_widths,
            self.classes,
            self.embed_dim,
            self.gate_hidden,
            self.activation.name()
        )
    }
}

/// `α ↦ (q, gate)` for a fixed batch and fixed observed labels.
pub struct TeacherProbs<'a> {
    pub spec: &'a TeacherSpec,
    pub x: &'a Tensor,
    pub labels: &'a [usize],
}

impl Program for TeacherProbs<'_> {
    fn signature(&self) -> Vec<Vec<usize>> {
        vec![vec![self.spec.param_count()]]
    }

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>> {
        let x = ops.constant(self.x.clone());
        let g = self.spec.graph(ops, &inputs[0], &x, self.labels)?;
        Ok(vec![g.q, g.gate])
    }
}

#[derive(Clone, Debug)]
pub struct TeacherOutput {
    /// `[batch, C]` distributions.
    pub q: Tensor,
    /// `[batch]` gate values in `(0, 1)`.
    pub gate: Tensor,
}

/// Evaluate the teacher. Pure in `(α, x, ỹ)`.
pub fn teacher_forward(
    spec: &TeacherSpec,
    alpha: &Tensor,
    x: &Tensor,
    labels: &[usize],
) -> Result<TeacherOutput> {
    spec.check_inputs(x, labels)?;
    let mut out = autodiff::forward(
        &TeacherProbs { spec, x, labels },
        std::slice::from_ref(alpha),
    )?;
    let gate = out.pop().expect("gate output");
    let q = out.pop().expect("q output");
    let b = gate.len();
    Ok(TeacherOutput {
        q,
        gate: gate.reshape(vec![b])?,
    })
}

/// Softmax of the teacher's classifier head alone, `[batch, C]`.
pub fn teacher_classifier_probs(spec: &TeacherSpec, alpha: &Tensor, x: &Tensor) -> Result<Tensor> {
    alpha.expect_shape(&[spec.param_count()], "teacher params")?;
    let mut ev = autodiff::Eval;
    let logits = spec.classifier_logits(&mut ev, alpha, x)?;
    ev.softmax(&logits)
}
