//! Acceptance run: prints one PASS / FAIL / NOT RUN line per criterion and
//! exits non-zero if any criterion that ran failed.
//!
//! Criteria 1 to 3 need the Cora and Citeseer planetoid files. Point
//! `VCLANC_DATA_DIR` at a directory holding `cora/` and `citeseer/`
//! subdirectories to run them; they take tens of minutes.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use common::{random_instance, rng, set_partitions};
use vclanc::experiment::{assignments_tsv, embeddings_tsv};
use vclanc::gmm::{em_fit, kl_attr_prior, kl_node_mixture, MixturePrior};
use vclanc::graph::{load_planetoid_dir, AttributedGraph, RunConfig};
use vclanc::metrics::{contingency, evaluate, MetricReport};
use vclanc::synthetic::PlantedPartition;
use vclanc::tensor::{finite_diff_check, DenseMatrix};
use vclanc::trainer::train;

const DATA_ENV: &str = "VCLANC_DATA_DIR";

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn report(id: u32, name: &str, verdict: &Verdict) {
    let (tag, detail) = match verdict {
        Verdict::Pass(d) => ("PASS", d),
        Verdict::Fail(d) => ("FAIL", d),
        Verdict::NotRun(d) => ("NOT RUN", d),
    };
    println!("[{tag}] {id}. {name}: {detail}");
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- datasets

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_ENV).map(PathBuf::from)
}

fn load_named(name: &str) -> Result<AttributedGraph, String> {
    let Some(root) = data_dir() else {
        return Err(format!("{DATA_ENV} not set; the {name} planetoid files are not bundled"));
    };
    load_planetoid_dir(&root.join(name), Some(name))
        .map(|(g, _)| g)
        .map_err(|e| format!("could not load {name}: {e}"))
}

/// Trains one run per seed in parallel; returns metrics and the slowest run.
fn multi_seed(graph: &AttributedGraph, config: &RunConfig, seeds: &[u64]) -> Result<(Vec<MetricReport>, f64), String> {
    let outcomes: Vec<Result<(MetricReport, f64), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let cfg = RunConfig { seed, ..config.clone() };
                s.spawn(move || {
                    let start = Instant::now();
                    let (_, result) = train(graph, cfg).map_err(|e| e.to_string())?;
                    let m = evaluate(&result.assignments, graph.labels().expect("labeled")).map_err(|e| e.to_string())?;
                    Ok((m, start.elapsed().as_secs_f64()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect()
    });
    let mut metrics = Vec::new();
    let mut slowest = 0.0f64;
    for o in outcomes {
        let (m, secs) = o?;
        metrics.push(m);
        slowest = slowest.max(secs);
    }
    Ok((metrics, slowest))
}

fn cora_and_citeseer() -> [Verdict; 3] {
    let cora = match load_named("cora") {
        Ok(g) => g,
        Err(e) => {
            let citeseer = match load_named("citeseer") {
                Err(c) => Verdict::NotRun(c),
                Ok(_) => Verdict::NotRun("Cora is required first".into()),
            };
            return [Verdict::NotRun(e.clone()), citeseer, Verdict::NotRun(e)];
        }
    };
    let defaults = RunConfig::default();
    let seeds: Vec<u64> = (0..10).collect();

    let (c1, full5) = match multi_seed(&cora, &defaults, &seeds) {
        Ok((ms, slowest)) => {
            let mean = MetricReport::mean(&ms).expect("ten runs");
            let ok = mean.nmi >= 0.45 && mean.f1 >= 0.62 && slowest <= 600.0;
            let full5 = MetricReport::mean(&ms[..5]).expect("five runs").nmi;
            (
                check(ok, format!("mean NMI {:.4}, F1 {:.4} over 10 seeds; slowest run {slowest:.0} s", mean.nmi, mean.f1)),
                Some(full5),
            )
        }
        Err(e) => (Verdict::Fail(e), None),
    };

    let c2 = match load_named("citeseer") {
        Err(e) => Verdict::NotRun(e),
        Ok(g) => match multi_seed(&g, &defaults, &seeds) {
            Ok((ms, slowest)) => {
                let mean = MetricReport::mean(&ms).expect("ten runs");
                let ok = mean.nmi >= 0.33 && mean.ari >= 0.32 && slowest <= 900.0;
                check(ok, format!("mean NMI {:.4}, ARI {:.4} over 10 seeds; slowest run {slowest:.0} s", mean.nmi, mean.ari))
            }
            Err(e) => Verdict::Fail(e),
        },
    };

    let c3 = match full5 {
        None => Verdict::NotRun("full-model Cora runs failed".into()),
        Some(full) => {
            let ablation = RunConfig {
                omega: 0.0,
                beta: 0.0,
                mixture_prior: false,
                ..defaults
            };
            match multi_seed(&cora, &ablation, &seeds[..5]) {
                Ok((ms, _)) => {
                    let base = MetricReport::mean(&ms).expect("five runs").nmi;
                    check(full - base >= 0.03, format!("full NMI {full:.4} vs ablation {base:.4} over 5 seeds (gap {:.4})", full - base))
                }
                Err(e) => Verdict::Fail(e),
            }
        }
    };
    [c1, c2, c3]
}

// ---------------------------------------------------------------- gradients

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut checks = 0;
    let instances: Vec<(u64, bool)> = (0..20).map(|s| (1000 + s, true)).chain((0..4).map(|s| (2000 + s, false))).collect();
    for &(seed, with_prior) in &instances {
        let inst = random_instance(seed, with_prior);
        let x = inst.flatten();
        for term in inst.term_names() {
            let analytic = inst.term_gradient(term);
            let err = match finite_diff_check(|p| Ok(inst.term_value(p, term)), &x, &analytic, 1e-5) {
                Ok(e) => e,
                Err(e) => return Verdict::Fail(format!("instance {seed}, {term}: {e}")),
            };
            checks += 1;
            if err > worst {
                worst = err;
                worst_at = format!("instance {seed}, {term}");
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 60.0,
        format!(
            "{} instances, {checks} term checks, max relative error {worst:.2e} ({worst_at}), {secs:.1} s",
            instances.len()
        ),
    )
}

// ---------------------------------------------------------------- KL oracles

/// Monte-Carlo mean and standard error of `log q(z) - log p(z)` summed over
/// all entries, for diagonal Gaussians `q = N(mu, e^lv)` and `p = N(pm, pv)`.
fn mc_kl(mu: &DenseMatrix, lv: &DenseMatrix, pm: &[f64], pv: &[f64], samples: usize, rng: &mut impl Rng) -> (f64, f64) {
    let (rows, cols) = mu.shape();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut v = 0.0;
        for i in 0..rows {
            for t in 0..cols {
                let eps: f64 = rng.sample(StandardNormal);
                let sd = (lv.get(i, t) / 2.0).exp();
                let z = mu.get(i, t) + sd * eps;
                // log q - log p, with the 2π terms cancelled.
                let log_q = -0.5 * (lv.get(i, t) + eps * eps);
                let log_p = -0.5 * (pv[t].ln() + (z - pm[t]).powi(2) / pv[t]);
                v += log_q - log_p;
            }
        }
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn kl_suite() -> Verdict {
    const SAMPLES: usize = 1_000_000;
    let mut worst_z = 0.0f64;
    let mut r = rng(77);
    for inst in 0..10 {
        let rows = r.random_range(1..=3);
        let cols = r.random_range(1..=3);
        let mu = common::uniform(&mut r, rows, cols, -1.5, 1.5);
        let lv = common::uniform(&mut r, rows, cols, -1.0, 1.0);
        let scale = (rows * cols) as f64;

        // Attribute side: prior N(0, v I).
        let prior_var = r.random_range(0.5..2.0);
        let got = match kl_attr_prior(&mu, &lv, prior_var) {
            Ok(v) => v,
            Err(e) => return Verdict::Fail(format!("instance {inst}: {e}")),
        };
        let (mc, se) = mc_kl(&mu, &lv, &vec![0.0; cols], &vec![prior_var; cols], SAMPLES, &mut r);
        worst_z = worst_z.max((got - mc / scale).abs() / (se / scale));

        // Node side with a single mixture component.
        let prior = MixturePrior::new(
            common::uniform(&mut r, 1, cols, -1.0, 1.0),
            common::uniform(&mut r, 1, cols, -0.7, 0.7),
            DenseMatrix::zeros(1, 1),
        )
        .expect("valid prior");
        let gamma = DenseMatrix::filled(rows, 1, 1.0);
        let got = match kl_node_mixture(&mu, &lv, &gamma, &prior) {
            Ok(v) => v,
            Err(e) => return Verdict::Fail(format!("instance {inst}: {e}")),
        };
        let pv: Vec<f64> = prior.log_vars.row(0).iter().map(|l| l.exp()).collect();
        let (mc, se) = mc_kl(&mu, &lv, prior.means.row(0), &pv, SAMPLES, &mut r);
        worst_z = worst_z.max((got - mc / scale).abs() / (se / scale));
    }
    check(
        worst_z < 3.0,
        format!("10 instances x 2 divergences, 1e6 samples each; largest deviation {worst_z:.2} standard errors"),
    )
}

// ---------------------------------------------------------------- metrics

struct Brute {
    nmi: f64,
    purity: f64,
    ari: f64,
    /// (precision, recall, f1) for every agreement-maximizing matching.
    prf: Vec<(f64, f64, f64)>,
}

fn brute_force(pred: &[usize], truth: &[usize]) -> Brute {
    let n = pred.len();
    let nf = n as f64;
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let count = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).count() as f64;

    let h = |labels: &[usize], k: usize| -> f64 {
        (0..k)
            .map(|c| count(&|i| labels[i] == c) / nf)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    };
    let (hp, ht) = (h(pred, kp), h(truth, kt));
    let mut mi = 0.0;
    for a in 0..kp {
        for b in 0..kt {
            let pab = count(&|i| pred[i] == a && truth[i] == b) / nf;
            if pab > 0.0 {
                let pa = count(&|i| pred[i] == a) / nf;
                let pb = count(&|i| truth[i] == b) / nf;
                mi += pab * (pab / (pa * pb)).ln();
            }
        }
    }
    let nmi = if hp == 0.0 && ht == 0.0 {
        1.0
    } else if hp == 0.0 || ht == 0.0 {
        0.0
    } else {
        (2.0 * mi / (hp + ht)).clamp(0.0, 1.0)
    };

    let purity = (0..kp)
        .map(|a| (0..kt).map(|b| count(&|i| pred[i] == a && truth[i] == b)).fold(0.0, f64::max))
        .sum::<f64>()
        / nf;

    // Pair confusion: ss = together in both, sd / ds = together in one only.
    let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    let ari = if denom == 0.0 { 1.0 } else { 2.0 * (ss * dd - sd * ds) / denom };

    // Every injective matching of size min(kp, kt).
    let mut matchings: Vec<Vec<Option<usize>>> = vec![Vec::new()];
    for _ in 0..kp {
        let mut next = Vec::new();
        for m in &matchings {
            for c in 0..kt {
                if !m.contains(&Some(c)) {
                    next.push([m.as_slice(), &[Some(c)]].concat());
                }
            }
            next.push([m.as_slice(), &[None]].concat());
        }
        matchings = next;
    }
    let size = kp.min(kt);
    matchings.retain(|m| m.iter().filter(|c| c.is_some()).count() == size);
    let agreement = |m: &[Option<usize>]| (0..n).filter(|&i| m[pred[i]] == Some(truth[i])).count();
    let best = matchings.iter().map(|m| agreement(m)).max().unwrap();
    let prf = matchings
        .iter()
        .filter(|m| agreement(m) == best)
        .map(|m| {
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for c in 0..kt {
                let support = count(&|i| truth[i] == c);
                let predicted = count(&|i| m[pred[i]] == Some(c));
                let tp = count(&|i| truth[i] == c && m[pred[i]] == Some(c));
                let w = support / nf;
                if predicted > 0.0 {
                    p += w * tp / predicted;
                }
                r += w * tp / support;
                f += w * 2.0 * tp / (predicted + support);
            }
            (p, r, f)
        })
        .collect();
    Brute { nmi, purity, ari, prf }
}

fn metric_suite() -> Verdict {
    let start = Instant::now();
    let mut compared = 0u64;
    for n in 1..=8 {
        let parts = set_partitions(n, 3);
        for pred in &parts {
            for truth in &parts {
                let got = match contingency(pred, truth) {
                    Ok(t) => MetricReport::from_table(&t),
                    Err(e) => return Verdict::Fail(format!("{pred:?} vs {truth:?}: {e}")),
                };
                let want = brute_force(pred, truth);
                let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
                let prf_ok = want
                    .prf
                    .iter()
                    .any(|&(p, r, f)| close(got.precision, p) && close(got.recall, r) && close(got.f1, f));
                if !(close(got.nmi, want.nmi) && close(got.purity, want.purity) && close(got.ari, want.ari) && prf_ok) {
                    return Verdict::Fail(format!(
                        "{pred:?} vs {truth:?}: got {got:?}, brute force nmi {} purity {} ari {} prf {:?}",
                        want.nmi, want.purity, want.ari, want.prf
                    ));
                }
                compared += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("{compared} partition pairs (n <= 8, <= 3 blocks) agree, {secs:.1} s"))
}

// ---------------------------------------------------------------- EM

fn em_suite() -> Verdict {
    let mut r = rng(4242);
    let mut iterations = 0;
    let mut reseeds = 0;
    for set in 0..50 {
        let dim = r.random_range(1..=3);
        let k = r.random_range(1..=4);
        let blobs = r.random_range(1..=4);
        let n = r.random_range(k.max(8)..=60);
        let centers = common::uniform(&mut r, blobs, dim, -4.0, 4.0);
        let points = DenseMatrix::from_fn(n, dim, |i, d| {
            let noise: f64 = r.sample(StandardNormal);
            centers.get(i % blobs, d) + 0.7 * noise
        });
        let fit = match em_fit(&points, k, r.random()) {
            Ok(f) => f,
            Err(e) => return Verdict::Fail(format!("dataset {set}: {e}")),
        };
        for seg in &fit.segments {
            for w in seg.windows(2) {
                if w[1] < w[0] - 1e-9 {
                    return Verdict::Fail(format!("dataset {set}: log-likelihood fell from {} to {}", w[0], w[1]));
                }
            }
        }
        iterations += fit.iterations;
        reseeds += fit.reseeds;
    }
    Verdict::Pass(format!("50 datasets, {iterations} EM iterations, none decreasing ({reseeds} reseeds restart the sequence)"))
}

// ---------------------------------------------------------------- synthetic runs

fn planted_suite() -> Verdict {
    let spec = PlantedPartition::default();
    let mut nmis = Vec::new();
    let mut slowest = 0.0f64;
    for seed in 0..5 {
        let graph = match spec.generate(seed) {
            Ok(g) => g,
            Err(e) => return Verdict::Fail(e.to_string()),
        };
        let start = Instant::now();
        let outcome = train(&graph, RunConfig { seed, ..RunConfig::default() })
            .and_then(|(_, res)| evaluate(&res.assignments, graph.labels().expect("labeled")));
        slowest = slowest.max(start.elapsed().as_secs_f64());
        match outcome {
            Ok(m) => nmis.push(m.nmi),
            Err(e) => return Verdict::Fail(format!("seed {seed}: {e}")),
        }
    }
    let good = nmis.iter().filter(|&&v| v >= 0.95).count();
    let listed: Vec<String> = nmis.iter().map(|v| format!("{v:.3}")).collect();
    check(
        good >= 4 && slowest < 60.0,
        format!("NMI per seed [{}], {good}/5 >= 0.95, slowest {slowest:.1} s", listed.join(", ")),
    )
}

fn determinism_suite() -> Verdict {
    let graph = match PlantedPartition::default().generate(21) {
        Ok(g) => g,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let names: Vec<String> = (0..graph.n_nodes()).map(|i| i.to_string()).collect();
    let run = || {
        train(&graph, RunConfig { seed: 8, ..RunConfig::default() }).map(|(t, res)| {
            (
                embeddings_tsv(&names, &res.embeddings).into_bytes(),
                assignments_tsv(&names, &res.assignments).into_bytes(),
                t.state.loss_log().into_bytes(),
            )
        })
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => check(
            a == b,
            format!(
                "embeddings ({} B), assignments ({} B), loss log ({} B) {}",
                a.0.len(),
                a.1.len(),
                a.2.len(),
                if a == b { "byte-identical" } else { "differ" }
            ),
        ),
        (Err(e), _) | (_, Err(e)) => Verdict::Fail(e.to_string()),
    }
}

fn main() {
    let names = [
        "Cora end-to-end",
        "Citeseer end-to-end",
        "Cora full model vs ablation",
        "gradient suite",
        "KL Monte-Carlo oracle",
        "metric brute-force oracle",
        "EM monotone log-likelihood",
        "planted-partition recovery",
        "determinism",
    ];
    let [c1, c2, c3] = cora_and_citeseer();
    let verdicts = [c1, c2, c3, gradient_suite(), kl_suite(), metric_suite(), em_suite(), planted_suite(), determinism_suite()];
    let mut failed = 0;
    for (i, (name, v)) in names.iter().zip(&verdicts).enumerate() {
        report(i as u32 + 1, name, v);
        if matches!(v, Verdict::Fail(_)) {
            failed += 1;
        }
    }
    let passed = verdicts.iter().filter(|v| matches!(v, Verdict::Pass(_))).count();
    let not_run = verdicts.len() - passed - failed;
    println!("acceptance: {passed} passed, {failed} failed, {not_run} not run");
    if failed > 0 {
        std::process::exit(1);
    }
}
