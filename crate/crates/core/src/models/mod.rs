//! Student predictor `p_w(y | x)` and teacher label corrector
//! `q_α(y | x, ỹ)`, both parameterized by flat vectors.

mod checkpoint;
mod init;
mod layout;
mod student;
mod teacher;

pub use checkpoint::{read_checkpoint, spec_hash, write_checkpoint, Checkpoint};
pub use init::init_params;
pub use layout::{ParamLayout, Segment};
pub use student::{student_forward, StudentLogProbs, StudentSpec};
pub use teacher::{
    teacher_classifier_probs, teacher_forward, TeacherGraph, TeacherOutput, TeacherProbs,
    TeacherSpec,
};

use crate::autodiff::Ops;
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<O: Ops>(self, ops: &mut O, v: &O::Value) -> Result<O::Value> {
        match self {
            Activation::Tanh => ops.tanh(v),
            Activation::Relu => ops.relu(v),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other}"
            ))),
        }
    }
}

/// Anything with a flat parameter layout.
pub trait ModelSpec {
    fn layout(&self) -> ParamLayout;

    /// Canonical text form, hashed into checkpoints.
    fn describe(&self) -> String;

    fn param_count(&self) -> usize {
        self.layout().total()
    }
}

/// `x · W + b` with weights read from `params` under `prefix`.
pub(crate) fn affine<O: Ops>(
    ops: &mut O,
    params: &O::Value,
    layout: &ParamLayout,
    prefix: &str,
    x: &O::Value,
) -> Result<O::Value> {
    let w = layout.expect(&format!("{prefix}.weight"));
    let b = layout.expect(&format!("{prefix}.bias"));
    let wv = ops.slice(params, w.offset, &w.shape)?;
    let bv = ops.slice(params, b.offset, &b.shape)?;
    let xw = ops.matmul(x, &wv)?;
    ops.add(&xw, &bv)
}

pub(crate) fn push_affine(layout: &mut ParamLayout, prefix: &str, fan_in: usize, fan_out: usize) {
    layout.push(format!("{prefix}.weight"), vec![fan_in, fan_out]);
    layout.push(format!("{prefix}.bias"), vec![fan_out]);
}

pub(crate) fn check_widths(what: &str, widths: &[usize]) -> Result<()> {
    if widths.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "{what} widths must be positive: {widths:?}"
        )));
    }
    Ok(())
}
