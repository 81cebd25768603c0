//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vclanc::gmm::{responsibilities, MixturePrior};
use vclanc::graph::{AttributedGraph, CahInput};
use vclanc::losses::{build_objective, soft_assignment, target_distribution, Frozen, LossWeights, NoiseDraw, Trainable};
use vclanc::model::{node_means, standard_normal, ModelContext, ModelParams};
use vclanc::tensor::DenseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Erdos-Renyi graph with random binary attributes and no labels.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, p_edge: f64, p_attr: f64) -> AttributedGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.random::<f64>() < p_edge {
                edges.push((a, b));
            }
        }
    }
    let mut feats = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if rng.random::<f64>() < p_attr {
                feats.push((i, j));
            }
        }
    }
    AttributedGraph::new(n, m, edges, feats, None).unwrap()
}

/// A complete, randomly drawn objective evaluation point.
pub struct Instance {
    pub graph: AttributedGraph,
    pub ctx: ModelContext,
    pub params: ModelParams,
    pub prior: Option<MixturePrior>,
    pub noise: Vec<NoiseDraw>,
    pub weights: LossWeights,
    pub frozen: Frozen,
}

pub fn random_instance(seed: u64, with_prior: bool) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(6..=12);
    let m = r.random_range(3..=6);
    let j = r.random_range(2..=3);
    let hidden = r.random_range(3..=5);
    let k = r.random_range(2..=3);
    let graph = random_graph(&mut r, n, m, 0.3, 0.4);
    let ctx = ModelContext::new(&graph, true);
    let mut params = ModelParams::init(n, m, hidden, j, &mut r);
    params.attr.b0 = uniform(&mut r, 1, hidden, -0.3, 0.3);
    params.attr.b1 = uniform(&mut r, 1, 2 * j, -0.3, 0.3);
    let prior = with_prior.then(|| {
        MixturePrior::new(
            uniform(&mut r, k, j, -1.0, 1.0),
            uniform(&mut r, k, j, -0.5, 0.5),
            uniform(&mut r, 1, k, -1.0, 1.0),
        )
        .unwrap()
    });
    let samples = r.random_range(1..=2);
    let noise = (0..samples)
        .map(|_| NoiseDraw {
            nodes: standard_normal(n, j, &mut r),
            attrs: standard_normal(m, j, &mut r),
        })
        .collect();
    let weights = LossWeights {
        omega: r.random_range(0.5..1.5),
        beta: r.random_range(0.5..1.5),
        alpha: r.random_range(0.5..2.0),
        pos_weight: 1.0,
        cah_input: if r.random::<bool>() { CahInput::Mean } else { CahInput::Sample },
    };
    let mut inst = Instance {
        graph,
        ctx,
        params,
        prior,
        noise,
        weights,
        frozen: Frozen::default(),
    };
    inst.freeze_at_current_point();
    inst
}

impl Instance {
    /// Fixes γ and the sharpened target at the current parameters.
    pub fn freeze_at_current_point(&mut self) {
        let Some(prior) = &self.prior else { return };
        let means = node_means(&self.ctx, &self.params).unwrap();
        let gamma = responsibilities(&means, prior).unwrap().into_matrix();
        let points = match self.weights.cah_input {
            CahInput::Mean => means,
            // Same sample the objective draws from the first noise draw.
            CahInput::Sample => sample_points(&self.ctx, &self.params, &self.noise[0].nodes),
        };
        let q = soft_assignment(&points, &prior.means, self.weights.alpha).unwrap();
        self.frozen = Frozen {
            responsibilities: Some(gamma),
            target: Some(target_distribution(&q)),
        };
    }

    pub fn objective(&self, trainable: Trainable) -> vclanc::losses::Objective {
        build_objective(
            &self.ctx,
            &self.params,
            self.prior.as_ref(),
            &self.noise,
            &self.weights,
            trainable,
            &self.frozen,
        )
        .unwrap()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        if let Some(p) = &self.prior {
            out.extend(p.tensors().iter().flat_map(|t| t.data().to_vec()));
        }
        out
    }

    /// Copy of `self` with every trainable tensor read from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> (ModelParams, Option<MixturePrior>) {
        let mut params = self.params.clone();
        let mut off = 0;
        for t in params.tensors_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        let prior = self.prior.clone().map(|mut p| {
            for t in p.tensors_mut() {
                let len = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + len]);
                off += len;
            }
            p
        });
        (params, prior)
    }

    /// Value of a named term (or `"total"`) at `flat`.
    pub fn term_value(&self, flat: &[f64], term: &str) -> f64 {
        let (params, prior) = self.with_flat(flat);
        let obj = build_objective(
            &self.ctx,
            &params,
            prior.as_ref(),
            &self.noise,
            &self.weights,
            Trainable { network: false, prior: false },
            &self.frozen,
        )
        .unwrap();
        let var = if term == "total" {
            obj.loss
        } else {
            obj.terms.iter().find(|(n, _)| *n == term).expect("term present").1
        };
        obj.tape.value(var).item().unwrap()
    }

    /// Analytic gradient of a named term (or `"total"`) w.r.t. `flatten()`.
    pub fn term_gradient(&self, term: &str) -> Vec<f64> {
        let obj = self.objective(Trainable { network: true, prior: true });
        let var = if term == "total" {
            obj.loss
        } else {
            obj.terms.iter().find(|(n, _)| *n == term).expect("term present").1
        };
        let grads = obj.tape.backward(var).unwrap();
        let mut out: Vec<f64> = obj.network.all().iter().flat_map(|v| grads.get(*v).unwrap().data().to_vec()).collect();
        if let Some(pv) = obj.prior {
            for v in [pv.means, pv.log_vars, pv.logits] {
                out.extend_from_slice(grads.get(v).unwrap().data());
            }
        }
        out
    }

    pub fn term_names(&self) -> Vec<&'static str> {
        let obj = self.objective(Trainable { network: false, prior: false });
        obj.terms.iter().map(|(n, _)| *n).chain(std::iter::once("total")).collect()
    }
}

/// First reparameterized node sample, computed outside the tape.
pub fn sample_points(ctx: &ModelContext, params: &ModelParams, noise: &DenseMatrix) -> DenseMatrix {
    let mut tape = vclanc::tensor::Tape::new();
    let vars = params.attach(&mut tape, false);
    let post = vclanc::model::gcn_posterior(&mut tape, ctx, &vars).unwrap();
    let z = vclanc::model::reparameterize(&mut tape, post.mean, post.log_var, noise).unwrap();
    tape.value(z).clone()
}

/// Every labeling of `n` items into at most `max_blocks` blocks, in
/// restricted-growth form (each set partition appears once).
pub fn set_partitions(n: usize, max_blocks: usize) -> Vec<Vec<usize>> {
    fn grow(cur: &mut Vec<usize>, n: usize, max_blocks: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        let used = cur.iter().max().map_or(0, |m| m + 1);
        for b in 0..=used.min(max_blocks - 1) {
            cur.push(b);
            grow(cur, n, max_blocks, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, max_blocks, &mut out);
    out
}
