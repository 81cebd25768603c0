//! Diagonal Gaussian-mixture prior over node embeddings.

mod em;
mod kl;

pub use em::{em_fit, kmeans, GmmFit, KMeansFit};
pub use kl::{
    kl_attr_prior, kl_categorical, kl_node_mixture, CategoricalKl, GaussianKl,
};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, Tape, Var};

/// Smallest admissible component variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Smallest responsibility entry.
pub const GAMMA_FLOOR: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// K diagonal Gaussians with softmax-parameterized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePrior {
    /// K×J centers.
    pub means: DenseMatrix,
    /// K×J log variances.
    pub log_vars: DenseMatrix,
    /// 1×K unconstrained weights.
    pub logits: DenseMatrix,
}

impl MixturePrior {
    pub fn new(means: DenseMatrix, log_vars: DenseMatrix, logits: DenseMatrix) -> Result<Self> {
        let k = means.rows();
        if log_vars.shape() != means.shape() || logits.shape() != (1, k) {
            return Err(Error::dim(
                "mixture_prior",
                format!(
                    "means {:?}, log_vars {:?}, logits {:?}",
                    means.shape(),
                    log_vars.shape(),
                    logits.shape()
                ),
            ));
        }
        let mut p = Self {
            means,
            log_vars,
            logits,
        };
        p.clamp_variances();
        Ok(p)
    }

    /// Builds from variances and mixing weights (as EM produces them).
    pub fn from_moments(means: DenseMatrix, variances: &DenseMatrix, weights: &[f64]) -> Result<Self> {
        let log_vars = variances.map(|v| v.max(VARIANCE_FLOOR).ln());
        let logits = DenseMatrix::from_vec(
            1,
            weights.len(),
            weights.iter().map(|w| w.max(f64::MIN_POSITIVE).ln()).collect(),
        )?;
        Self::new(means, log_vars, logits)
    }

    /// A single standard-normal component of width `latent`.
    pub fn standard_normal(latent: usize) -> Self {
        Self {
            means: DenseMatrix::zeros(1, latent),
            log_vars: DenseMatrix::zeros(1, latent),
            logits: DenseMatrix::zeros(1, 1),
        }
    }

    pub fn k(&self) -> usize {
        self.means.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.cols()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(self.logits.data())
    }

    pub fn variances(&self) -> DenseMatrix {
        self.log_vars.map(f64::exp)
    }

    /// Raises any log variance below the floor.
    pub fn clamp_variances(&mut self) {
        let floor = VARIANCE_FLOOR.ln();
        self.log_vars.data_mut().iter_mut().for_each(|v| {
            if *v < floor {
                *v = floor
            }
        });
    }

    pub const TENSOR_NAMES: [&'static str; 3] = ["prior_means", "prior_log_vars", "prior_logits"];

    pub fn tensors(&self) -> [&DenseMatrix; 3] {
        [&self.means, &self.log_vars, &self.logits]
    }

    pub fn tensors_mut(&mut self) -> [&mut DenseMatrix; 3] {
        [&mut self.means, &mut self.log_vars, &mut self.logits]
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    pub fn attach(&self, tape: &mut Tape, trainable: bool) -> PriorVars {
        let mut put = |m: &DenseMatrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        PriorVars {
            means: put(&self.means),
            log_vars: put(&self.log_vars),
            logits: put(&self.logits),
        }
    }

    /// `log π_c + log N(z_i | μ_c, σ²_c)` for every point and component.
    pub fn joint_log_density(&self, points: &DenseMatrix) -> Result<DenseMatrix> {
        if points.cols() != self.latent_dim() {
            return Err(Error::dim(
                "joint_log_density",
                format!("points of width {} vs prior width {}", points.cols(), self.latent_dim()),
            ));
        }
        let log_w: Vec<f64> = log_softmax(self.logits.data());
        let k = self.k();
        let mut out = DenseMatrix::zeros(points.rows(), k);
        for c in 0..k {
            let mu = self.means.row(c);
            let lv = self.log_vars.row(c);
            let norm: f64 = lv.iter().map(|l| LN_2PI + l).sum();
            for i in 0..points.rows() {
                let mahal: f64 = points
                    .row(i)
                    .iter()
                    .zip(mu)
                    .zip(lv)
                    .map(|((z, m), l)| (z - m) * (z - m) * (-l).exp())
                    .sum();
                out.set(i, c, log_w[c] - 0.5 * (norm + mahal));
            }
        }
        Ok(out)
    }
}

/// Tape handles for [`MixturePrior`].
#[derive(Clone, Copy, Debug)]
pub struct PriorVars {
    pub means: Var,
    pub log_vars: Var,
    pub logits: Var,
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    log_softmax(xs).into_iter().map(f64::exp).collect()
}

/// Row-stochastic N×K matrix of posterior component probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities(DenseMatrix);

impl Responsibilities {
    /// Normalizes each row of per-component log scores, flooring entries at
    /// [`GAMMA_FLOOR`] while keeping rows summing to one.
    pub fn from_log_scores(scores: &DenseMatrix) -> Self {
        let k = scores.cols();
        let keep = 1.0 - k as f64 * GAMMA_FLOOR;
        let mut out = DenseMatrix::zeros(scores.rows(), k);
        for i in 0..scores.rows() {
            let lse = log_sum_exp(scores.row(i));
            for (o, s) in out.row_mut(i).iter_mut().zip(scores.row(i)) {
                *o = GAMMA_FLOOR + keep * (s - lse).exp();
            }
        }
        Self(out)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    /// Per-row argmax, ties to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.0.rows())
            .map(|i| {
                let row = self.0.row(i);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Posterior component probabilities by Bayes' rule, via log-sum-exp.
pub fn responsibilities(points: &DenseMatrix, prior: &MixturePrior) -> Result<Responsibilities> {
    Ok(Responsibilities::from_log_scores(&prior.joint_log_density(points)?))
}
