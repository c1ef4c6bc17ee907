use super::kernels::{self as k, Broadcast};
use super::{Ops, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum OpKind {
    Input,
    Constant,
    MatMul,
    Add(Broadcast),
    Mul(Broadcast),
    Relu,
    Tanh,
    Sigmoid,
    LogSoftmax,
    Softmax,
    Concat {
        left_cols: usize,
    },
    GatherRows {
        indices: Vec<usize>,
        table_rows: usize,
    },
    Sum,
    Mean,
    Scale(f64),
    Slice {
        offset: usize,
        shape: Vec<usize>,
        total: usize,
    },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Constant => "constant",
            OpKind::MatMul => "matmul",
            OpKind::Add(_) => "add",
            OpKind::Mul(_) => "mul",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Softmax => "softmax",
            OpKind::Concat { .. } => "concat",
            OpKind::GatherRows { .. } => "gather_rows",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Scale(_) => "scale",
            OpKind::Slice { .. } => "slice",
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: OpKind,
    pub(crate) parents: Vec<usize>,
    pub(crate) value: Tensor,
}

/// Records op applications while evaluating, for a later reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inputs: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        let id = self.push(OpKind::Input, vec![], t);
        self.inputs.push(id.0);
        id
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: OpKind, parents: Vec<usize>, value: Tensor) -> Var {
        self.nodes.push(Node { op, parents, value });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op: OpKind, parents: Vec<usize>, value: Tensor) -> Result<Var> {
        value.check_finite(op.name())?;
        Ok(self.push(op, parents, value))
    }

    /// Close the tape, marking `outputs` as the recorded function's results.
    pub fn finish(self, outputs: &[Var]) -> ComputationRecord {
        ComputationRecord {
            nodes: self.nodes,
            inputs: self.inputs,
            outputs: outputs.iter().map(|v| v.0).collect(),
        }
    }
}

impl Ops for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(OpKind::Constant, vec![], t)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = k::matmul(self.value(*a), self.value(*b))?;
        self.push_checked(OpKind::MatMul, vec![a.0, b.0], v)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let bc = k::add_broadcast(self.value(*a), self.value(*b))?;
        let v = k::add(self.value(*a), self.value(*b), bc);
        self.push_checked(OpKind::Add(bc), vec![a.0, b.0], v)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let bc = k::mul_broadcast(self.value(*a), self.value(*b))?;
        let v = k::mul(self.value(*a), self.value(*b), bc);
        self.push_checked(OpKind::Mul(bc), vec![a.0, b.0], v)
    }

    fn relu(&mut self, a: &Var) -> Result<Var> {
        let v = k::relu(self.value(*a));
        self.push_checked(OpKind::Relu, vec![a.0], v)
    }

    fn tanh(&mut self, a: &Var) -> Result<Var> {
        let v = k::tanh(self.value(*a));
        self.push_checked(OpKind::Tanh, vec![a.0], v)
    }

    fn sigmoid(&mut self, a: &Var) -> Result<Var> {
        let v = k::sigmoid(self.value(*a));
        self.push_checked(OpKind::Sigmoid, vec![a.0], v)
    }

    fn log_softmax(&mut self, a: &Var) -> Result<Var> {
        let v = k::log_softmax(self.value(*a));
        self.push_checked(OpKind::LogSoftmax, vec![a.0], v)
    }

    fn softmax(&mut self, a: &Var) -> Result<Var> {
        let v = k::softmax(self.value(*a));
        self.push_checked(OpKind::Softmax, vec![a.0], v)
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let left_cols = self.value(*a).cols();
        let v = k::concat(self.value(*a), self.value(*b))?;
        self.push_checked(OpKind::Concat { left_cols }, vec![a.0, b.0], v)
    }

    fn gather_rows(&mut self, table: &Var, indices: &[usize]) -> Result<Var> {
        let table_rows = self.value(*table).rows();
        let v = k::gather_rows(self.value(*table), indices)?;
        self.push_checked(
            OpKind::GatherRows {
                indices: indices.to_vec(),
                table_rows,
            },
            vec![table.0],
            v,
        )
    }

    fn sum(&mut self, a: &Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(*a).sum());
        self.push_checked(OpKind::Sum, vec![a.0], v)
    }

    fn mean(&mut self, a: &Var) -> Result<Var> {
        let t = self.value(*a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push_checked(OpKind::Mean, vec![a.0], v)
    }

    fn scale(&mut self, a: &Var, c: f64) -> Result<Var> {
        let v = self.value(*a).scale(c);
        self.push_checked(OpKind::Scale(c), vec![a.0], v)
    }

    fn slice(&mut self, flat: &Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let total = self.value(*flat).len();
        let v = k::slice(self.value(*flat), offset, shape)?;
        self.push_checked(
            OpKind::Slice {
                offset,
                shape: shape.to_vec(),
                total,
            },
            vec![flat.0],
            v,
        )
    }
}

/// A taped forward evaluation: topologically ordered nodes with their
/// primal values, sufficient for reverse-mode differentiation.
#[derive(Clone, Debug)]
pub struct ComputationRecord {
    pub(crate) nodes: Vec<Node>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
}

impl ComputationRecord {
    pub fn outputs(&self) -> Vec<&Tensor> {
        self.outputs.iter().map(|&i| &self.nodes[i].value).collect()
    }

    pub fn output(&self, i: usize) -> &Tensor {
        &self.nodes[self.outputs[i]].value
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every parent index precedes its consumer.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.parents.iter().all(|&p| p < i))
    }

    /// Re-execute the recorded ops on new input values.
    pub fn replay(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::ShapeMismatch {
                op: "replay",
                expected: vec![self.inputs.len()],
                found: vec![inputs.len()],
            });
        }
        let mut vals: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (slot, t) in self.inputs.iter().zip(inputs) {
            t.expect_same_shape(&self.nodes[*slot].value, "replay")?;
            vals[*slot] = Some(t.clone());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |j: usize| vals[node.parents[j]].as_ref().expect("parent evaluated");
            let v = match &node.op {
                OpKind::Input => continue,
                OpKind::Constant => node.value.clone(),
                OpKind::MatMul => k::matmul(arg(0), arg(1))?,
                OpKind::Add(bc) => k::add(arg(0), arg(1), *bc),
                OpKind::Mul(bc) => k::mul(arg(0), arg(1), *bc),
                OpKind::Relu => k::relu(arg(0)),
                OpKind::Tanh => k::tanh(arg(0)),
                OpKind::Sigmoid => k::sigmoid(arg(0)),
                OpKind::LogSoftmax => k::log_softmax(arg(0)),
                OpKind::Softmax => k::softmax(arg(0)),
                OpKind::Concat { .. } => k::concat(arg(0), arg(1))?,
                OpKind::GatherRows { indices, .. } => k::gather_rows(arg(0), indices)?,
                OpKind::Sum => Tensor::scalar(arg(0).sum()),
                OpKind::Mean => Tensor::scalar(arg(0).sum() / arg(0).len() as f64),
                OpKind::Scale(c) => arg(0).scale(*c),
                OpKind::Slice { offset, shape, .. } => k::slice(arg(0), *offset, shape)?,
            };
            v.check_finite(node.op.name())?;
            vals[i] = Some(v);
        }
        Ok(self
            .outputs
            .iter()
            .map(|&o| vals[o].clone().expect("output evaluated"))
            .collect())
    }

    /// Reverse sweep: `uᵀJ` for one cotangent per output, returning one
    /// gradient per input.
    pub fn backward(&self, cotangents: &[Tensor]) -> Result<Vec<Tensor>> {
        if cotangents.len() != self.outputs.len() {
            return Err(Error::ShapeMismatch {
                op: "vjp",
                expected: vec![self.outputs.len()],
                found: vec![cotangents.len()],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (&o, u) in self.outputs.iter().zip(cotangents) {
            u.expect_same_shape(&self.nodes[o].value, "vjp cotangent")?;
            accumulate(&mut grads[o], u.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let parent = |j: usize| &self.nodes[node.parents[j]].value;
            match &node.op {
                OpKind::Input => {
                    grads[i] = Some(g);
                    continue;
                }
                OpKind::Constant => {}
                OpKind::MatMul => {
                    let da = k::matmul_nt(&g, parent(1));
                    let db = k::matmul_tn(parent(0), &g);
                    accumulate(&mut grads[node.parents[0]], da);
                    accumulate(&mut grads[node.parents[1]], db);
                }
                OpKind::Add(bc) => {
                    let db = match bc {
                        Broadcast::Row => k::sum_rows(&g),
                        _ => g.clone(),
                    };
                    accumulate(&mut grads[node.parents[0]], g);
                    accumulate(&mut grads[node.parents[1]], db);
                }
                OpKind::Mul(bc) => {
                    let (a, b) = (parent(0), parent(1));
                    let da = k::mul(&g, b, *bc);
                    let db = match bc {
                        Broadcast::Column => k::sum_cols(&k::mul(&g, a, Broadcast::None)),
                        _ => k::mul(&g, a, Broadcast::None),
                    };
                    accumulate(&mut grads[node.parents[0]], da);
                    accumulate(&mut grads[node.parents[1]], db);
                }
                OpKind::Relu => {
                    let d = g.zip_map(parent(0), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads[node.parents[0]], d);
                }
                OpKind::Tanh => {
                    let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                    accumulate(&mut grads[node.parents[0]], d);
                }
                OpKind::Sigmoid => {
                    let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?;
                    accumulate(&mut grads[node.parents[0]], d);
                }
                OpKind::LogSoftmax => {
                    accumulate(
                        &mut grads[node.parents[0]],
                        log_softmax_vjp(&node.value, &g),
                    );
                }
                OpKind::Softmax => {
                    accumulate(&mut grads[node.parents[0]], softmax_vjp(&node.value, &g));
                }
                OpKind::Concat { left_cols } => {
                    let (da, db) = k::split(&g, *left_cols);
                    accumulate(&mut grads[node.parents[0]], da);
                    accumulate(&mut grads[node.parents[1]], db);
                }
                OpKind::GatherRows {
                    indices,
                    table_rows,
                } => {
                    let d = k::scatter_rows(&g, indices, *table_rows);
                    accumulate(&mut grads[node.parents[0]], d);
                }
                OpKind::Sum => {
                    let d = Tensor::full(parent(0).shape(), g.item());
                    accumulate(&mut grads[node.parents[0]], d);
                }
                OpKind::Mean => {
                    let p = parent(0);
                    let d = Tensor::full(p.shape(), g.item() / p.len() as f64);
                    accumulate(&mut grads[node.parents[0]], d);
                }
                OpKind::Scale(c) => {
                    accumulate(&mut grads[node.parents[0]], g.scale(*c));
                }
                OpKind::Slice { offset, total, .. } => {
                    accumulate(&mut grads[node.parents[0]], k::unslice(&g, *offset, *total));
                }
            }
        }
        self.inputs
            .iter()
            .map(|&i| {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| self.nodes[i].value.zeros_like());
                g.check_finite("vjp")?;
                Ok(g)
            })
            .collect()
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// `dx = g − softmax(x) · rowsum(g)` with `softmax(x) = exp(y)`.
fn log_softmax_vjp(y: &Tensor, g: &Tensor) -> Tensor {
    let n = y.cols();
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
        let s: f64 = gr.iter().sum();
        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| gv - yv.exp() * s));
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

/// `dx = y ⊙ (g − ⟨g, y⟩)` per row.
fn softmax_vjp(y: &Tensor, g: &Tensor) -> Tensor {
    let n = y.cols();
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - s)));
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}
