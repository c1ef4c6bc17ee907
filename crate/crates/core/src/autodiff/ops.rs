use super::Tensor;
use crate::error::Result;

/// The fixed op vocabulary. A differentiable function is written once
/// against this trait and then run by any evaluator: [`Eval`](super::Eval)
/// for plain values, [`Tape`](super::Tape) to record for reverse mode, or
/// [`DualEval`](super::DualEval) for forward mode.
pub trait Ops {
    type Value: Clone;

    /// A value that carries no derivative information.
    fn constant(&mut self, t: Tensor) -> Self::Value;

    /// `[m,k] · [k,n]`.
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Elementwise sum; `b` may also be a `[n]` bias added to every row.
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Elementwise product; `b` may also be a `[m,1]` column scaling each row.
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn tanh(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, a: &Self::Value) -> Result<Self::Value>;
    /// Row-wise over the last axis.
    fn log_softmax(&mut self, a: &Self::Value) -> Result<Self::Value>;
    /// Row-wise over the last axis.
    fn softmax(&mut self, a: &Self::Value) -> Result<Self::Value>;
    /// Concatenate two `[m,·]` matrices along the last axis.
    fn concat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Embedding lookup: rows `indices` of a `[rows, cols]` table.
    fn gather_rows(&mut self, table: &Self::Value, indices: &[usize]) -> Result<Self::Value>;
    /// Sum of all entries, shape `[1]`.
    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value>;
    /// Mean of all entries, shape `[1]`.
    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    /// View `prod(shape)` entries of a flat vector starting at `offset`.
    fn slice(&mut self, flat: &Self::Value, offset: usize, shape: &[usize]) -> Result<Self::Value>;

    /// One-hot encoding; always a constant.
    fn one_hot(&mut self, labels: &[usize], classes: usize) -> Result<Self::Value> {
        let t = super::kernels::one_hot(labels, classes)?;
        Ok(self.constant(t))
    }
}

/// A function over the op vocabulary with a declared input signature.
pub trait Program {
    /// Shapes of the inputs, in order.
    fn signature(&self) -> Vec<Vec<usize>>;

    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>>;
}

pub(crate) fn check_signature<P: Program>(program: &P, inputs: &[Tensor]) -> Result<()> {
    let sig = program.signature();
    if sig.len() != inputs.len() {
        return Err(crate::Error::ShapeMismatch {
            op: "program inputs",
            expected: vec![sig.len()],
            found: vec![inputs.len()],
        });
    }
    for (s, t) in sig.iter().zip(inputs) {
        t.expect_shape(s, "program inputs")?;
    }
    Ok(())
}
