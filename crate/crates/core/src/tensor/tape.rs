//! Reverse-mode gradient engine over a fixed set of matrix primitives.
//!
//! A [`Tape`] records every operation in execution order, which is already a
//! topological order, so the backward sweep is a single reverse pass. Leaves
//! are either trainable parameters or constants; only parameters (and nodes
//! that depend on them) receive gradients.
//!
//! Operations that do not decompose cheaply into the primitives (the
//! reconstruction likelihoods, the Gaussian KL terms, the Student-t soft
//! assignment) implement [`Function`] directly with a hand-written backward.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseCsr};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation with explicit forward and backward rules.
pub trait Function {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix>;

    /// Gradients w.r.t. each input, given the gradient w.r.t. the output.
    /// Entries may be `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        output: &DenseMatrix,
        grad_output: &DenseMatrix,
        needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>>;
}

enum NodeKind {
    Param,
    Constant,
    Op {
        func: Box<dyn Function>,
        inputs: Vec<Var>,
    },
}

struct Node {
    value: DenseMatrix,
    kind: NodeKind,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, kind: NodeKind, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            kind,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(value, NodeKind::Param, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, NodeKind::Constant, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].kind, NodeKind::Param)
    }

    /// Runs `func` forward and records it.
    pub fn apply<F: Function + 'static>(&mut self, func: F, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&DenseMatrix> = inputs.iter().map(|v| self.value(*v)).collect();
            func.forward(&vals)?
        };
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {}",
                func.name()
            )));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(
            value,
            NodeKind::Op {
                func: Box::new(func),
                inputs: inputs.to_vec(),
            },
            needs_grad,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(MatMul, &[a, b])
    }

    pub fn spmm(&mut self, s: &SparseOperand, b: Var) -> Result<Var> {
        self.apply(Spmm(s.clone()), &[b])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.apply(kind, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Scale(s), &[a])
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.apply(AddRow, &[a, bias])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(SliceCols { start, end }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Sum, &[a])
    }

    /// `Σ coeff_i · term_i` over scalar nodes.
    pub fn linear_combination(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(c, v) in terms {
            let scaled = if c == 1.0 { v } else { self.scale(v, c)? };
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| Error::Contract("empty linear combination".into()))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                loss_value.rows(),
                loss_value.cols()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let NodeKind::Op { func, inputs } = &node.kind else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
            let vals: Vec<&DenseMatrix> = inputs.iter().map(|v| self.value(*v)).collect();
            let input_grads = func.backward(&vals, &node.value, &g, &needs)?;
            for ((input, need), ig) in inputs.iter().zip(&needs).zip(input_grads) {
                if !need {
                    continue;
                }
                let ig = ig.ok_or_else(|| {
                    Error::Contract(format!("{} returned no gradient for a needed input", func.name()))
                })?;
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
            // Intermediate gradients are released once consumed; only leaves keep theirs.
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match n.kind {
                NodeKind::Param => Some(g.unwrap_or_else(|| DenseMatrix::zeros(n.value.rows(), n.value.cols()))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar loss w.r.t. every parameter leaf on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; untouched parameters yield zeros.
    pub fn get(&self, v: Var) -> Result<&DenseMatrix> {
        self.grads
            .get(v.0)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Contract(format!("node {} is not a parameter leaf", v.0)))
    }

    pub fn take(&mut self, v: Var) -> Result<DenseMatrix> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .ok_or_else(|| Error::Contract(format!("node {} is not a parameter leaf", v.0)))
    }
}

/// A sparse matrix together with its transpose, shared across tapes.
#[derive(Clone, Debug)]
pub struct SparseOperand {
    matrix: Arc<SparseCsr>,
    transpose: Arc<SparseCsr>,
}

impl SparseOperand {
    pub fn new(matrix: SparseCsr) -> Self {
        let transpose = Arc::new(matrix.transpose());
        Self {
            matrix: Arc::new(matrix),
            transpose,
        }
    }

    pub fn matrix(&self) -> &SparseCsr {
        &self.matrix
    }

    pub fn transposed(&self) -> &SparseCsr {
        &self.transpose
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Exp => x.exp(),
            Activation::Log => x.ln(),
        }
    }
}

/// Untaped elementwise activation.
pub fn activation(x: &DenseMatrix, kind: Activation) -> Result<DenseMatrix> {
    if kind == Activation::Log {
        if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
    }
    Ok(x.map(|v| kind.apply_scalar(v)))
}

impl Function for Activation {
    fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Exp => "exp",
            Activation::Log => "log",
        }
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        activation(inputs[0], *self)
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        output: &DenseMatrix,
        g: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let x = inputs[0];
        let mut out = g.clone();
        let (xs, ys) = (x.data(), output.data());
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            let d = match self {
                Activation::Relu => {
                    if xs[k] > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Activation::Tanh => 1.0 - ys[k] * ys[k],
                Activation::Sigmoid => ys[k] * (1.0 - ys[k]),
                Activation::Exp => ys[k],
                Activation::Log => 1.0 / xs[k],
            };
            *o *= d;
        }
        Ok(vec![Some(out)])
    }
}

struct MatMul;

impl Function for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        inputs[0].matmul(inputs[1])
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let da = if needs[0] { Some(g.matmul_t(inputs[1])?) } else { None };
        let db = if needs[1] { Some(inputs[0].t_matmul(g)?) } else { None };
        Ok(vec![da, db])
    }
}

struct Spmm(SparseOperand);

impl Function for Spmm {
    fn name(&self) -> &'static str {
        "spmm"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        self.0.matrix.spmm(inputs[0])
    }

    fn backward(
        &self,
        _inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        Ok(vec![Some(self.0.transpose.spmm(g)?)])
    }
}

struct Add;

impl Function for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        inputs[0].add(inputs[1])
    }

    fn backward(
        &self,
        _inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

struct Mul;

impl Function for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        inputs[0].hadamard(inputs[1])
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let da = if needs[0] { Some(g.hadamard(inputs[1])?) } else { None };
        let db = if needs[1] { Some(g.hadamard(inputs[0])?) } else { None };
        Ok(vec![da, db])
    }
}

struct Scale(f64);

impl Function for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        Ok(inputs[0].scale(self.0))
    }

    fn backward(
        &self,
        _inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        Ok(vec![Some(g.scale(self.0))])
    }
}

struct AddRow;

impl Function for AddRow {
    fn name(&self) -> &'static str {
        "add_row"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        inputs[0].add_row_broadcast(inputs[1])
    }

    fn backward(
        &self,
        _inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        Ok(vec![Some(g.clone()), Some(g.column_sums())])
    }
}

struct SliceCols {
    start: usize,
    end: usize,
}

impl Function for SliceCols {
    fn name(&self) -> &'static str {
        "slice_cols"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        inputs[0].slice_cols(self.start, self.end)
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let mut out = DenseMatrix::zeros(inputs[0].rows(), inputs[0].cols());
        for r in 0..g.rows() {
            out.row_mut(r)[self.start..self.end].copy_from_slice(g.row(r));
        }
        Ok(vec![Some(out)])
    }
}

struct Sum;

impl Function for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        Ok(DenseMatrix::scalar(inputs[0].sum()))
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        g: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let x = inputs[0];
        Ok(vec![Some(DenseMatrix::filled(x.rows(), x.cols(), g.item()?))])
    }
}
