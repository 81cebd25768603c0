//! Node and attribute encoders and the reparameterized latent samples.
//!
//! Nodes go through a two-layer graph convolution, attributes through a
//! two-layer perceptron over the columns of the feature matrix. Both heads
//! emit a mean and a log-variance of width J, concatenated.

mod decoder;

pub use decoder::{
    bernoulli_ll, decode_adjacency, decode_attributes, decode_blocks, InnerProductBernoulli,
    DECODE_BLOCK_ROWS, PROB_FLOOR,
};

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, AttributedGraph};
use crate::tensor::{Activation, DenseMatrix, SparseCsr, SparseOperand, Tape, Var};

/// Graph-side inputs shared by every forward pass.
#[derive(Clone, Debug)]
pub struct ModelContext {
    /// Normalized adjacency operator.
    pub norm_adj: SparseOperand,
    /// N×M features.
    pub features: SparseOperand,
    /// M×N features, the attribute encoder's input.
    pub features_t: SparseOperand,
    /// Reconstruction target for the adjacency decoder.
    pub adjacency: Arc<SparseCsr>,
    /// Reconstruction target for the attribute decoder.
    pub feature_target: Arc<SparseCsr>,
}

impl ModelContext {
    pub fn new(graph: &AttributedGraph, self_loops: bool) -> Self {
        let features = graph.features().clone();
        Self {
            norm_adj: SparseOperand::new(normalize_adjacency(graph, self_loops)),
            features_t: SparseOperand::new(features.transpose()),
            feature_target: Arc::new(features.clone()),
            features: SparseOperand::new(features),
            adjacency: Arc::new(graph.adjacency().clone()),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn n_attrs(&self) -> usize {
        self.feature_target.cols()
    }
}

/// Node encoder weights: `W0` is M×hidden, `W1` is hidden×2J.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEncoderParams {
    pub w0: DenseMatrix,
    pub w1: DenseMatrix,
}

/// Attribute encoder weights: `W0` is N×hidden (acting on rows of Xᵀ),
/// `b0` 1×hidden, `W1` hidden×2J, `b1` 1×2J.
#[derive(Clone, Debug, PartialEq)]
pub struct AttrEncoderParams {
    pub w0: DenseMatrix,
    pub b0: DenseMatrix,
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
}

/// All network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub node: NodeEncoderParams,
    pub attr: AttrEncoderParams,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit))
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(
        n_nodes: usize,
        n_attrs: usize,
        hidden: usize,
        latent: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let node = NodeEncoderParams {
            w0: glorot(rng, n_attrs, hidden),
            w1: glorot(rng, hidden, 2 * latent),
        };
        let attr = AttrEncoderParams {
            w0: glorot(rng, n_nodes, hidden),
            b0: DenseMatrix::zeros(1, hidden),
            w1: glorot(rng, hidden, 2 * latent),
            b1: DenseMatrix::zeros(1, 2 * latent),
        };
        Self { node, attr }
    }

    pub fn zeros(n_nodes: usize, n_attrs: usize, hidden: usize, latent: usize) -> Self {
        Self {
            node: NodeEncoderParams {
                w0: DenseMatrix::zeros(n_attrs, hidden),
                w1: DenseMatrix::zeros(hidden, 2 * latent),
            },
            attr: AttrEncoderParams {
                w0: DenseMatrix::zeros(n_nodes, hidden),
                b0: DenseMatrix::zeros(1, hidden),
                w1: DenseMatrix::zeros(hidden, 2 * latent),
                b1: DenseMatrix::zeros(1, 2 * latent),
            },
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.node.w1.cols() / 2
    }

    /// Canonical tensor order: node w0, node w1, attr w0, attr b0, attr w1, attr b1.
    pub fn tensors(&self) -> [&DenseMatrix; 6] {
        [
            &self.node.w0,
            &self.node.w1,
            &self.attr.w0,
            &self.attr.b0,
            &self.attr.w1,
            &self.attr.b1,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DenseMatrix; 6] {
        [
            &mut self.node.w0,
            &mut self.node.w1,
            &mut self.attr.w0,
            &mut self.attr.b0,
            &mut self.attr.w1,
            &mut self.attr.b1,
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 6] = [
        "node_w0", "node_w1", "attr_w0", "attr_b0", "attr_w1", "attr_b1",
    ];

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    /// Puts every tensor on the tape, as parameters or as constants.
    pub fn attach(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut put = |m: &DenseMatrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        ParamVars {
            node_w0: put(&self.node.w0),
            node_w1: put(&self.node.w1),
            attr_w0: put(&self.attr.w0),
            attr_b0: put(&self.attr.b0),
            attr_w1: put(&self.attr.w1),
            attr_b1: put(&self.attr.b1),
        }
    }
}

/// Tape handles for [`ModelParams`], in canonical order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub node_w0: Var,
    pub node_w1: Var,
    pub attr_w0: Var,
    pub attr_b0: Var,
    pub attr_w1: Var,
    pub attr_b1: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 6] {
        [
            self.node_w0,
            self.node_w1,
            self.attr_w0,
            self.attr_b0,
            self.attr_w1,
            self.attr_b1,
        ]
    }
}

/// Posterior parameters and one reparameterized sample.
#[derive(Clone, Debug)]
pub struct LatentBatch {
    pub mean: Var,
    pub log_var: Var,
    pub sample: Var,
    pub noise: DenseMatrix,
}

/// Posterior heads before sampling.
#[derive(Clone, Copy, Debug)]
pub struct Posterior {
    pub mean: Var,
    pub log_var: Var,
}

fn tag(layer: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("{layer}: {msg}")),
        other => other,
    }
}

fn split_heads(tape: &mut Tape, out: Var, layer: &'static str) -> Result<Posterior> {
    let width = tape.value(out).cols();
    if !width.is_multiple_of(2) {
        return Err(Error::dim(layer, format!("head width {width} is odd")));
    }
    let j = width / 2;
    Ok(Posterior {
        mean: tape.slice_cols(out, 0, j)?,
        log_var: tape.slice_cols(out, j, width)?,
    })
}

/// `H = ReLU(Ã X W0)`, `[μ | log σ²] = Ã H W1`.
pub fn gcn_posterior(tape: &mut Tape, ctx: &ModelContext, vars: &ParamVars) -> Result<Posterior> {
    let xw = tape.spmm(&ctx.features, vars.node_w0).map_err(tag("gcn layer 1"))?;
    let pre = tape.spmm(&ctx.norm_adj, xw).map_err(tag("gcn layer 1"))?;
    let h = tape.activation(pre, Activation::Relu).map_err(tag("gcn layer 1"))?;
    let ah = tape.spmm(&ctx.norm_adj, h).map_err(tag("gcn layer 2"))?;
    let out = tape.matmul(ah, vars.node_w1).map_err(tag("gcn layer 2"))?;
    split_heads(tape, out, "gcn layer 2")
}

/// `H = tanh(Xᵀ W0 + b0)`, `[μ | log σ²] = H W1 + b1`.
pub fn mlp_posterior(tape: &mut Tape, ctx: &ModelContext, vars: &ParamVars) -> Result<Posterior> {
    let xw = tape.spmm(&ctx.features_t, vars.attr_w0).map_err(tag("mlp layer 1"))?;
    let pre = tape.add_row(xw, vars.attr_b0).map_err(tag("mlp layer 1"))?;
    let h = tape.activation(pre, Activation::Tanh).map_err(tag("mlp layer 1"))?;
    let hw = tape.matmul(h, vars.attr_w1).map_err(tag("mlp layer 2"))?;
    let out = tape.add_row(hw, vars.attr_b1).map_err(tag("mlp layer 2"))?;
    split_heads(tape, out, "mlp layer 2")
}

/// `Z = μ + exp(log σ² / 2) ⊙ ε`; ε enters as a constant.
pub fn reparameterize(tape: &mut Tape, mean: Var, log_var: Var, noise: &DenseMatrix) -> Result<Var> {
    if tape.value(mean).shape() != noise.shape() || tape.value(log_var).shape() != noise.shape() {
        return Err(Error::dim(
            "reparameterize",
            format!(
                "mean {:?}, log-variance {:?}, noise {:?}",
                tape.value(mean).shape(),
                tape.value(log_var).shape(),
                noise.shape()
            ),
        ));
    }
    let half = tape.scale(log_var, 0.5)?;
    let std = tape.activation(half, Activation::Exp)?;
    let eps = tape.constant(noise.clone());
    let spread = tape.mul(std, eps)?;
    tape.add(mean, spread)
}

pub fn gcn_encode(
    tape: &mut Tape,
    ctx: &ModelContext,
    vars: &ParamVars,
    noise: &DenseMatrix,
) -> Result<LatentBatch> {
    let post = gcn_posterior(tape, ctx, vars)?;
    let sample = reparameterize(tape, post.mean, post.log_var, noise)?;
    Ok(LatentBatch {
        mean: post.mean,
        log_var: post.log_var,
        sample,
        noise: noise.clone(),
    })
}

pub fn mlp_encode(
    tape: &mut Tape,
    ctx: &ModelContext,
    vars: &ParamVars,
    noise: &DenseMatrix,
) -> Result<LatentBatch> {
    let post = mlp_posterior(tape, ctx, vars)?;
    let sample = reparameterize(tape, post.mean, post.log_var, noise)?;
    Ok(LatentBatch {
        mean: post.mean,
        log_var: post.log_var,
        sample,
        noise: noise.clone(),
    })
}

/// Node posterior means without recording gradients.
pub fn node_means(ctx: &ModelContext, params: &ModelParams) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape, false);
    let post = gcn_posterior(&mut tape, ctx, &vars)?;
    Ok(tape.value(post.mean).clone())
}

/// Standard-normal noise of the given shape.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}
