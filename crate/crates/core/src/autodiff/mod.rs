//! Dense `f64` tensors with taped reverse mode (VJP) and dual-number
//! forward mode (JVP) over a small fixed op vocabulary.
//!
//! Functions are written once against [`Ops`] (usually inside a
//! [`Program`]) and evaluated by whichever backend is needed.

mod counter;
mod dual;
mod eval;
pub mod kernels;
mod ops;
mod tape;
mod tensor;

pub use counter::{count_passes, PassCounts};
pub use dual::{DualEval, DualTensor};
pub use eval::Eval;
pub use ops::{Ops, Program};
pub use tape::{ComputationRecord, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Plain forward evaluation of `program`.
pub fn forward<P: Program>(program: &P, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    ops::check_signature(program, inputs)?;
    let mut ev = Eval;
    program.run(&mut ev, inputs)
}

/// Evaluate `program` while recording it for [`vjp`].
pub fn evaluate<P: Program>(
    program: &P,
    inputs: &[Tensor],
) -> Result<(Vec<Tensor>, ComputationRecord)> {
    ops::check_signature(program, inputs)?;
    counter::bump(|c| c.forward += 1);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let outs = program.run(&mut tape, &vars)?;
    let record = tape.finish(&outs);
    let values = record.outputs().into_iter().cloned().collect();
    Ok((values, record))
}

/// `uᵀJ` of the recorded function; one cotangent per output, one gradient
/// per input.
pub fn vjp(record: &ComputationRecord, cotangents: &[Tensor]) -> Result<Vec<Tensor>> {
    counter::bump(|c| c.vjp += 1);
    record.backward(cotangents)
}

/// Forward-mode `Jv`. Returns `(outputs, output tangents)`.
pub fn jvp<P: Program>(
    program: &P,
    inputs: &[Tensor],
    tangents: &[Tensor],
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    ops::check_signature(program, inputs)?;
    if tangents.len() != inputs.len() {
        return Err(Error::ShapeMismatch {
            op: "jvp tangents",
            expected: vec![inputs.len()],
            found: vec![tangents.len()],
        });
    }
    counter::bump(|c| c.jvp += 1);
    let duals = inputs
        .iter()
        .zip(tangents)
        .map(|(p, t)| {
            t.expect_same_shape(p, "jvp tangent")?;
            DualTensor::new(p.clone(), t.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ev = DualEval;
    let outs = program.run(&mut ev, &duals)?;
    Ok(outs.into_iter().map(DualTensor::into_parts).unzip())
}

/// Gradient of the single scalar output of `program` with respect to
/// every input.
pub fn grad<P: Program>(program: &P, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    let (outs, record) = evaluate(program, inputs)?;
    let value = outs
        .first()
        .filter(|o| o.len() == 1)
        .ok_or_else(|| Error::InvalidArgument("grad needs a scalar-output program".into()))?
        .item();
    let grads = vjp(&record, &[Tensor::scalar(1.0)])?;
    Ok((value, grads))
}

/// Finite-difference stencils for [`finite_diff_grad_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    Central,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, error `O(h⁴)`.
    FivePoint,
}

impl Stencil {
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[
                (2.0, -1.0 / 12.0),
                (1.0, 8.0 / 12.0),
                (-1.0, -8.0 / 12.0),
                (-2.0, 1.0 / 12.0),
            ],
        }
    }
}

/// Central-difference gradient of a scalar function; coordinates are
/// probed independently (in parallel when enabled).
pub fn finite_diff_grad<F>(f: F, theta: &Tensor, step: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64> + Sync + Send,
{
    finite_diff_grad_with(f, theta, step, Stencil::Central)
}

/// [`finite_diff_grad`] with a chosen stencil.
pub fn finite_diff_grad_with<F>(f: F, theta: &Tensor, step: f64, stencil: Stencil) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64> + Sync + Send,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let g = crate::par::try_map_range(theta.len(), |i| {
        let mut acc = 0.0;
        for &(offset, weight) in stencil.taps() {
            let mut probe = theta.clone();
            probe.data_mut()[i] += offset * step;
            let v = f(&probe)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op: "finite_diff_grad",
                });
            }
            acc += weight * v;
        }
        Ok(acc / step)
    })?;
    Ok(Tensor::from_parts(theta.shape().to_vec(), g))
}
