//! Evidence lower bound, assignment hardening, mutual center distance, and
//! the combined training objective.

use crate::error::{Error, Result};
use crate::gmm::{responsibilities, CategoricalKl, GaussianKl, MixturePrior, PriorVars};
use crate::graph::CahInput;
use crate::model::{gcn_posterior, mlp_posterior, reparameterize, InnerProductBernoulli, ModelContext, ModelParams, ParamVars};
use crate::tensor::{DenseMatrix, Function, Tape, Var};

/// Lower bound applied to soft assignments inside the hardening loss.
pub const Q_FLOOR: f64 = 1e-10;

/// Smoothing inside the pairwise center distance.
pub const DISTANCE_EPS: f64 = 1e-12;

fn student_kernel(sq_dist: f64, alpha: f64) -> f64 {
    (1.0 + sq_dist / alpha).powf(-(alpha + 1.0) / 2.0)
}

/// Student-t soft assignment of points to centers.
/// Inputs: `[points (N×J), centers (K×J)]`; output N×K, rows summing to one.
pub struct SoftAssignment {
    pub alpha: f64,
}

fn sq_dists(points: &DenseMatrix, centers: &DenseMatrix) -> Result<DenseMatrix> {
    if points.cols() != centers.cols() {
        return Err(Error::dim(
            "soft_assignment",
            format!("points {:?} vs centers {:?}", points.shape(), centers.shape()),
        ));
    }
    Ok(DenseMatrix::from_fn(points.rows(), centers.rows(), |i, c| {
        points
            .row(i)
            .iter()
            .zip(centers.row(c))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }))
}

impl Function for SoftAssignment {
    fn name(&self) -> &'static str {
        "soft_assignment"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let d = sq_dists(inputs[0], inputs[1])?;
        let mut q = d.map(|v| student_kernel(v, self.alpha));
        for i in 0..q.rows() {
            let s: f64 = q.row(i).iter().sum();
            q.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        Ok(q)
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        output: &DenseMatrix,
        grad_output: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let (points, centers) = (inputs[0], inputs[1]);
        let d = sq_dists(points, centers)?;
        let (n, k) = output.shape();
        let j = points.cols();
        let mut d_points = DenseMatrix::zeros(n, j);
        let mut d_centers = DenseMatrix::zeros(k, j);
        for i in 0..n {
            let q = output.row(i);
            let g = grad_output.row(i);
            let mean_g: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..k {
                // dL/d log kernel, then through d log kernel / d sq_dist.
                let dlog = q[c] * (g[c] - mean_g);
                let dd = dlog * -(self.alpha + 1.0) / (2.0 * (self.alpha + d.get(i, c)));
                for t in 0..j {
                    let diff = 2.0 * (points.get(i, t) - centers.get(c, t)) * dd;
                    d_points.data_mut()[i * j + t] += diff;
                    d_centers.data_mut()[c * j + t] -= diff;
                }
            }
        }
        Ok(vec![Some(d_points), Some(d_centers)])
    }
}

/// Plain evaluation of the Student-t soft assignment.
pub fn soft_assignment(points: &DenseMatrix, centers: &DenseMatrix, alpha: f64) -> Result<DenseMatrix> {
    SoftAssignment { alpha }.forward(&[points, centers])
}

/// Sharpened targets: square, divide by column mass, renormalize rows.
pub fn target_distribution(q: &DenseMatrix) -> DenseMatrix {
    let freq = q.column_sums();
    let mut p = DenseMatrix::from_fn(q.rows(), q.cols(), |i, c| {
        let f = freq.get(0, c);
        if f > 0.0 {
            q.get(i, c) * q.get(i, c) / f
        } else {
            0.0
        }
    });
    for i in 0..p.rows() {
        let s: f64 = p.row(i).iter().sum();
        if s > 0.0 {
            p.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
    }
    p
}

/// `Σ_i Σ_c P_ic log(P_ic / Q_ic)` against a constant target P.
/// Input: `[Q (N×K)]`.
pub struct HardeningLoss {
    target: DenseMatrix,
}

impl HardeningLoss {
    pub fn new(target: DenseMatrix) -> Self {
        Self { target }
    }
}

impl Function for HardeningLoss {
    fn name(&self) -> &'static str {
        "cah"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let q = inputs[0];
        if q.shape() != self.target.shape() {
            return Err(Error::dim(
                "cah",
                format!("Q {:?} vs P {:?}", q.shape(), self.target.shape()),
            ));
        }
        let total = self
            .target
            .data()
            .iter()
            .zip(q.data())
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p.ln() - q.max(Q_FLOOR).ln()))
            .sum();
        Ok(DenseMatrix::scalar(total))
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        grad_output: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let g = grad_output.item()?;
        let q = inputs[0];
        let data = self
            .target
            .data()
            .iter()
            .zip(q.data())
            .map(|(p, q)| if *q > Q_FLOOR { -g * p / q } else { 0.0 })
            .collect();
        Ok(vec![Some(DenseMatrix::from_vec(q.rows(), q.cols(), data)?)])
    }
}

/// Plain evaluation of the hardening loss.
pub fn cah_loss(target: &DenseMatrix, q: &DenseMatrix) -> Result<f64> {
    HardeningLoss::new(target.clone()).forward(&[q])?.item()
}

/// Mean pairwise Euclidean distance over all ordered center pairs,
/// `(1/K²) Σ_c Σ_k ‖μ_c − μ_k‖`, each distance smoothed so that it is
/// differentiable and exactly zero for coincident centers.
/// Input: `[centers (K×J)]`.
pub struct MutualDistance;

fn smoothed_distance(sq: f64) -> f64 {
    (sq + DISTANCE_EPS).sqrt() - DISTANCE_EPS.sqrt()
}

impl Function for MutualDistance {
    fn name(&self) -> &'static str {
        "mutual_distance"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let m = inputs[0];
        let k = m.rows();
        if k == 0 {
            return Err(Error::Domain {
                op: "mutual_distance",
                detail: "no centers".into(),
            });
        }
        let mut total = 0.0;
        for a in 0..k {
            for b in (a + 1)..k {
                let sq: f64 = m.row(a).iter().zip(m.row(b)).map(|(x, y)| (x - y) * (x - y)).sum();
                total += 2.0 * smoothed_distance(sq);
            }
        }
        Ok(DenseMatrix::scalar(total / (k * k) as f64))
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        grad_output: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let m = inputs[0];
        let (k, j) = m.shape();
        let s = grad_output.item()? * 2.0 / (k * k) as f64;
        let mut grad = DenseMatrix::zeros(k, j);
        for a in 0..k {
            for b in (a + 1)..k {
                let sq: f64 = m.row(a).iter().zip(m.row(b)).map(|(x, y)| (x - y) * (x - y)).sum();
                let inv = s / (sq + DISTANCE_EPS).sqrt();
                for t in 0..j {
                    let g = inv * (m.get(a, t) - m.get(b, t));
                    grad.data_mut()[a * j + t] += g;
                    grad.data_mut()[b * j + t] -= g;
                }
            }
        }
        Ok(vec![Some(grad)])
    }
}

pub fn mutual_distance(centers: &DenseMatrix) -> Result<f64> {
    MutualDistance.forward(&[centers])?.item()
}

/// Minimized loss: `−(elbo + β·distance − ω·hardening)`.
pub fn total_objective(elbo: f64, cah: f64, distance: f64, omega: f64, beta: f64) -> f64 {
    -(elbo + beta * distance - omega * cah)
}

/// Per-epoch values of every objective term.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub recon_adj: f64,
    pub recon_attr: f64,
    pub kl_attr: f64,
    pub kl_node: f64,
    pub kl_cat: f64,
    pub elbo: f64,
    pub cah: f64,
    pub mutual_distance: f64,
    pub total: f64,
}

impl LossReport {
    pub const TSV_HEADER: &'static str =
        "epoch\tphase\trecon_adj\trecon_attr\tkl_attr\tkl_node\tkl_cat\telbo\tcah\tmutual_distance\ttotal";

    pub fn values(&self) -> [f64; 9] {
        [
            self.recon_adj,
            self.recon_attr,
            self.kl_attr,
            self.kl_node,
            self.kl_cat,
            self.elbo,
            self.cah,
            self.mutual_distance,
            self.total,
        ]
    }

    /// One tab-separated log row (shortest round-trip float formatting).
    pub fn tsv_row(&self, epoch: usize, phase: &str) -> String {
        let mut row = format!("{epoch}\t{phase}");
        for v in self.values() {
            row.push('\t');
            row.push_str(&v.to_string());
        }
        row
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Weights and switches of the objective.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub omega: f64,
    pub beta: f64,
    pub alpha: f64,
    pub pos_weight: f64,
    pub cah_input: CahInput,
}

/// Which parameter groups receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub network: bool,
    pub prior: bool,
}

/// Optional fixed values for quantities normally recomputed from the
/// current node means. Holding them fixed makes the objective a smooth
/// function of the parameters, which gradient checks rely on.
#[derive(Clone, Debug, Default)]
pub struct Frozen {
    pub responsibilities: Option<DenseMatrix>,
    pub target: Option<DenseMatrix>,
}

/// One noise draw: node noise (N×J) and attribute noise (M×J).
#[derive(Clone, Debug)]
pub struct NoiseDraw {
    pub nodes: DenseMatrix,
    pub attrs: DenseMatrix,
}

/// A recorded forward pass of the objective.
pub struct Objective {
    pub tape: Tape,
    pub loss: Var,
    pub report: LossReport,
    pub network: ParamVars,
    pub prior: Option<PriorVars>,
    /// Node posterior means of this pass.
    pub node_means: DenseMatrix,
    /// Scalar handle of every term present, by report field name.
    pub terms: Vec<(&'static str, Var)>,
}

fn tagged(term: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("{term}: {msg}")),
        other => other,
    }
}

/// Records the objective on a fresh tape.
///
/// With `prior = None` the node KL is taken against a single standard normal
/// and the clustering terms vanish (pretraining form). Otherwise γ, Q and P
/// are derived from the current node means unless `frozen` overrides them.
pub fn build_objective(
    ctx: &ModelContext,
    params: &ModelParams,
    prior: Option<&MixturePrior>,
    noise: &[NoiseDraw],
    weights: &LossWeights,
    trainable: Trainable,
    frozen: &Frozen,
) -> Result<Objective> {
    if noise.is_empty() {
        return Err(Error::Contract("objective needs at least one noise draw".into()));
    }
    let mut tape = Tape::new();
    let network = params.attach(&mut tape, trainable.network);
    let prior_vars = prior.map(|p| p.attach(&mut tape, trainable.prior));
    let latent = params.latent_dim();

    let node_post = gcn_posterior(&mut tape, ctx, &network)?;
    let attr_post = mlp_posterior(&mut tape, ctx, &network)?;
    let node_means = tape.value(node_post.mean).clone();

    let inv_l = 1.0 / noise.len() as f64;
    let mut recon_adj_terms = Vec::with_capacity(noise.len());
    let mut recon_attr_terms = Vec::with_capacity(noise.len());
    let mut first_sample = None;
    for draw in noise {
        let zv = reparameterize(&mut tape, node_post.mean, node_post.log_var, &draw.nodes)?;
        let za = reparameterize(&mut tape, attr_post.mean, attr_post.log_var, &draw.attrs)?;
        first_sample.get_or_insert(zv);
        let ra = tape
            .apply(InnerProductBernoulli::new(ctx.adjacency.clone(), weights.pos_weight), &[zv, zv])
            .map_err(tagged("recon_adj"))?;
        let rx = tape
            .apply(InnerProductBernoulli::new(ctx.feature_target.clone(), 1.0), &[zv, za])
            .map_err(tagged("recon_attr"))?;
        recon_adj_terms.push((inv_l, ra));
        recon_attr_terms.push((inv_l, rx));
    }
    let recon_adj = tape.linear_combination(&recon_adj_terms)?;
    let recon_attr = tape.linear_combination(&recon_attr_terms)?;

    let std_mean = tape.constant(DenseMatrix::zeros(1, latent));
    let std_log_var = tape.constant(DenseMatrix::zeros(1, latent));
    let kl_attr = tape
        .apply(
            GaussianKl::attr_prior(ctx.n_attrs(), latent),
            &[attr_post.mean, attr_post.log_var, std_mean, std_log_var],
        )
        .map_err(tagged("kl_attr"))?;

    let mut terms = vec![(-1.0, recon_adj), (-1.0, recon_attr), (1.0, kl_attr)];
    let mut named = vec![("recon_adj", recon_adj), ("recon_attr", recon_attr), ("kl_attr", kl_attr)];
    let mut report = LossReport::default();
    let (kl_node, kl_cat, cah, distance);
    match (prior, prior_vars) {
        (Some(p), Some(pv)) => {
            let gamma = match &frozen.responsibilities {
                Some(g) => g.clone(),
                None => responsibilities(&node_means, p)?.into_matrix(),
            };
            let kn = tape
                .apply(
                    GaussianKl::node_mixture(gamma.clone(), latent),
                    &[node_post.mean, node_post.log_var, pv.means, pv.log_vars],
                )
                .map_err(tagged("kl_node"))?;
            let kc = tape
                .apply(CategoricalKl::new(gamma), &[pv.logits])
                .map_err(tagged("kl_cat"))?;
            let points = match weights.cah_input {
                CahInput::Mean => node_post.mean,
                CahInput::Sample => first_sample.expect("at least one draw"),
            };
            let q = tape
                .apply(SoftAssignment { alpha: weights.alpha }, &[points, pv.means])
                .map_err(tagged("soft_assignment"))?;
            let target = match &frozen.target {
                Some(t) => t.clone(),
                None => target_distribution(tape.value(q)),
            };
            let h = tape.apply(HardeningLoss::new(target), &[q]).map_err(tagged("cah"))?;
            let md = tape.apply(MutualDistance, &[pv.means]).map_err(tagged("mutual_distance"))?;
            terms.extend([(1.0, kn), (1.0, kc), (weights.omega, h), (-weights.beta, md)]);
            named.extend([("kl_node", kn), ("kl_cat", kc), ("cah", h), ("mutual_distance", md)]);
            kl_node = tape.value(kn).item()?;
            kl_cat = tape.value(kc).item()?;
            cah = tape.value(h).item()?;
            distance = tape.value(md).item()?;
        }
        _ => {
            let ones = DenseMatrix::filled(ctx.n_nodes(), 1, 1.0);
            let kn = tape
                .apply(
                    GaussianKl::node_mixture(ones, latent),
                    &[node_post.mean, node_post.log_var, std_mean, std_log_var],
                )
                .map_err(tagged("kl_node"))?;
            terms.push((1.0, kn));
            named.push(("kl_node", kn));
            kl_node = tape.value(kn).item()?;
            kl_cat = 0.0;
            cah = 0.0;
            distance = 0.0;
        }
    }
    let loss = tape.linear_combination(&terms).map_err(tagged("total"))?;

    report.recon_adj = tape.value(recon_adj).item()?;
    report.recon_attr = tape.value(recon_attr).item()?;
    report.kl_attr = tape.value(kl_attr).item()?;
    report.kl_node = kl_node;
    report.kl_cat = kl_cat;
    report.elbo = report.recon_adj + report.recon_attr - report.kl_attr - kl_node - kl_cat;
    report.cah = cah;
    report.mutual_distance = distance;
    report.total = tape.value(loss).item()?;
    if !report.is_finite() {
        return Err(Error::Numeric(format!("non-finite objective term: {report:?}")));
    }
    Ok(Objective {
        tape,
        loss,
        report,
        network,
        prior: prior_vars,
        node_means,
        terms: named,
    })
}
