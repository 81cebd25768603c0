//! Checks the hand-written backward passes of the full objective against
//! central finite differences on a small random graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vclanc::gmm::{responsibilities, MixturePrior};
use vclanc::graph::{AttributedGraph, CahInput};
use vclanc::losses::{build_objective, soft_assignment, target_distribution, Frozen, LossWeights, NoiseDraw, Trainable};
use vclanc::model::{node_means, standard_normal, ModelContext, ModelParams};
use vclanc::tensor::gradcheck::FD_STEP;
use vclanc::tensor::{finite_diff_check, DenseMatrix};

fn main() -> vclanc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, m, hidden, j, k) = (10, 5, 4, 2, 3);
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).collect();
    let edges: Vec<_> = edges.into_iter().filter(|_| rng.random::<f64>() < 0.3).collect();
    let feats: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |c| (i, c))).collect();
    let feats: Vec<_> = feats.into_iter().filter(|_| rng.random::<f64>() < 0.4).collect();
    let graph = AttributedGraph::new(n, m, edges, feats, None)?;
    let ctx = ModelContext::new(&graph, true);

    let params = ModelParams::init(n, m, hidden, j, &mut rng);
    let rand = |rng: &mut ChaCha8Rng, r, c| DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let prior = MixturePrior::new(rand(&mut rng, k, j), rand(&mut rng, k, j).scale(0.5), rand(&mut rng, 1, k))?;
    let noise = vec![NoiseDraw {
        nodes: standard_normal(n, j, &mut rng),
        attrs: standard_normal(m, j, &mut rng),
    }];
    let weights = LossWeights {
        omega: 1.0,
        beta: 1.0,
        alpha: 1.0,
        pos_weight: 1.0,
        cah_input: CahInput::Mean,
    };

    // γ and the sharpened target are held fixed at the starting point.
    let means = node_means(&ctx, &params)?;
    let frozen = Frozen {
        responsibilities: Some(responsibilities(&means, &prior)?.into_matrix()),
        target: Some(target_distribution(&soft_assignment(&means, &prior.means, weights.alpha)?)),
    };

    let both = Trainable { network: true, prior: true };
    let obj = build_objective(&ctx, &params, Some(&prior), &noise, &weights, both, &frozen)?;
    let flat: Vec<f64> = params
        .tensors()
        .into_iter()
        .chain(prior.tensors())
        .flat_map(|t| t.data().to_vec())
        .collect();
    let evaluate = |x: &[f64], term: &str| -> vclanc::Result<f64> {
        let (mut p, mut q) = (params.clone(), prior.clone());
        let mut off = 0;
        for t in p.tensors_mut().into_iter().chain(q.tensors_mut()) {
            let len = t.len();
            t.data_mut().copy_from_slice(&x[off..off + len]);
            off += len;
        }
        let none = Trainable { network: false, prior: false };
        let o = build_objective(&ctx, &p, Some(&q), &noise, &weights, none, &frozen)?;
        let var = o.terms.iter().find(|(n, _)| *n == term).map_or(o.loss, |t| t.1);
        o.tape.value(var).item()
    };

    let pv = obj.prior.expect("prior attached");
    let handles: Vec<_> = obj.network.all().into_iter().chain([pv.means, pv.log_vars, pv.logits]).collect();
    for (term, var) in obj.terms.iter().copied().chain([("total", obj.loss)]) {
        let grads = obj.tape.backward(var)?;
        let analytic: Vec<f64> = handles.iter().flat_map(|h| grads.get(*h).unwrap().data().to_vec()).collect();
        let err = finite_diff_check(|x| evaluate(x, term), &flat, &analytic, FD_STEP)?;
        println!("{term:<16} max relative error {err:.2e}");
    }
    Ok(())
}
