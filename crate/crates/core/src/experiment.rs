//! End-to-end runs and their on-disk artifacts.
//!
//! A training run writes into its run directory:
//!
//! | file | contents |
//! |------|----------|
//! | `config.txt` | the effective configuration, `key = value` |
//! | `loss_log.tsv` | one row per epoch, every objective term |
//! | `checkpoint.tsv` | final parameters (see [`crate::checkpoint`]) |
//! | `checkpoints/epoch-NNNNN.tsv` | periodic snapshots |
//! | `embeddings.tsv` | `node` then J posterior-mean coordinates |
//! | `assignments.tsv` | `node`, `cluster` |
//! | `metrics.json` | [`MetricReport`], when labels are known |
//! | `report.json` | [`RunReport`], self-contained summary |

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{load_dataset, load_dataset_dir, load_planetoid_dir, AttributedGraph, DatasetMeta, RunConfig};
use crate::losses::LossReport;
use crate::metrics::{contingency, MetricReport, NmiNorm};
use crate::tensor::DenseMatrix;
use crate::trainer::{ClusteringResult, Trainer, UpdateGroup};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_LOG_FILE: &str = "loss_log.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const ASSIGNMENTS_FILE: &str = "assignments.tsv";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "VCLANC_OUT";
const DEFAULT_OUT: &str = "runs";

/// Output root: explicit path, else `$VCLANC_OUT`, else `./runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Loads the graph named by the configuration's dataset fields.
pub fn load_graph(config: &RunConfig) -> Result<(AttributedGraph, DatasetMeta)> {
    if let Some(dir) = &config.planetoid_dir {
        return load_planetoid_dir(dir, None);
    }
    if let Some(dir) = &config.dataset {
        return load_dataset_dir(dir);
    }
    match (&config.edges, &config.features) {
        (Some(e), Some(f)) => load_dataset(e, f, config.labels.as_deref()),
        _ => Err(Error::Input(
            "no dataset: give a dataset directory, a planetoid directory, or edges and features files".into(),
        )),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `node` column followed by one column per embedding dimension.
pub fn embeddings_tsv(names: &[String], embeddings: &DenseMatrix) -> String {
    let mut out = String::from("node");
    for d in 0..embeddings.cols() {
        let _ = write!(out, "\tz{d}");
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for v in embeddings.row(i) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`embeddings_tsv`].
pub fn parse_embeddings_tsv(text: &str) -> Result<(Vec<String>, DenseMatrix)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Input("empty embeddings file".into()))?;
    let width = header.split('\t').count().saturating_sub(1);
    let mut names = Vec::new();
    let mut data = Vec::new();
    for (no, line) in lines.enumerate() {
        let mut parts = line.split('\t');
        names.push(parts.next().unwrap_or_default().to_string());
        let row: Vec<f64> = parts
            .map(|t| t.parse().map_err(|_| Error::Input(format!("embeddings line {}: bad value {t:?}", no + 2))))
            .collect::<Result<_>>()?;
        if row.len() != width {
            return Err(Error::Input(format!("embeddings line {}: expected {width} values", no + 2)));
        }
        data.extend(row);
    }
    Ok((names.clone(), DenseMatrix::from_vec(names.len(), width, data)?))
}

pub fn assignments_tsv(names: &[String], assignments: &[usize]) -> String {
    let mut out = String::from("#node\tcluster\n");
    for (name, c) in names.iter().zip(assignments) {
        let _ = writeln!(out, "{name}\t{c}");
    }
    out
}

/// Reads a two-column `node<TAB>value` file (`#` lines are comments).
pub fn read_node_table(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(node), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Input(format!("{}:{}: expected two fields", path.display(), no + 1)));
        };
        if !seen.insert(node.to_string()) {
            return Err(Error::Input(format!("{}:{}: duplicate node {node:?}", path.display(), no + 1)));
        }
        rows.push((node.to_string(), value.to_string()));
    }
    Ok(rows)
}

fn dense_ids(tokens: &[&str]) -> Vec<usize> {
    let mut distinct: Vec<&str> = tokens.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if distinct.iter().all(|t| t.parse::<i64>().is_ok()) {
        distinct.sort_by_key(|t| t.parse::<i64>().expect("checked above"));
    }
    let index: HashMap<&str, usize> = distinct.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    tokens.iter().map(|t| index[t]).collect()
}

/// Scores an assignments file against a labels file over the same nodes.
pub fn evaluate_files(assignments: &Path, labels: &Path, norm: NmiNorm) -> Result<MetricReport> {
    let pred = read_node_table(assignments)?;
    let truth: HashMap<String, String> = read_node_table(labels)?.into_iter().collect();
    if pred.len() != truth.len() || pred.iter().any(|(n, _)| !truth.contains_key(n)) {
        return Err(Error::Input(format!(
            "node sets differ: {} assigned nodes, {} labeled nodes",
            pred.len(),
            truth.len()
        )));
    }
    let pred_tokens: Vec<&str> = pred.iter().map(|(_, v)| v.as_str()).collect();
    let true_tokens: Vec<&str> = pred.iter().map(|(n, _)| truth[n].as_str()).collect();
    let table = contingency(&dense_ids(&pred_tokens), &dense_ids(&true_tokens))?;
    let mut report = MetricReport::from_table(&table);
    report.nmi = crate::metrics::nmi_with(&table, norm);
    Ok(report)
}

/// One epoch row of [`RunReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub phase: String,
    pub updated: String,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Self-contained summary of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub n_nodes: usize,
    pub n_attrs: usize,
    pub n_edges: usize,
    pub k: usize,
    pub epochs: Vec<EpochRow>,
    pub metrics: Option<MetricReport>,
    pub wall_seconds: f64,
}

/// Outcome of [`run_training`].
pub struct RunOutcome {
    pub report: RunReport,
    pub result: ClusteringResult,
    pub dir: PathBuf,
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Trains on `graph` and writes every artifact into `dir`.
pub fn run_training(graph: &AttributedGraph, meta: &DatasetMeta, config: RunConfig, dir: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(CONFIG_FILE), &config.to_text())?;

    let mut trainer = Trainer::new(graph, config.clone())?;
    let snapshots = dir.join(CHECKPOINT_DIR);
    let mut hook = |t: &Trainer| -> Result<()> {
        Checkpoint::capture(t)?.save(&snapshots.join(format!("epoch-{:05}.tsv", t.state.epoch)))
    };
    let result = trainer.run(Some(&mut hook))?;

    Checkpoint::capture(&trainer)?.save(&dir.join(CHECKPOINT_FILE))?;
    let names = if meta.node_names.len() == graph.n_nodes() {
        meta.node_names.clone()
    } else {
        default_names(graph.n_nodes())
    };
    write(&dir.join(LOSS_LOG_FILE), &trainer.state.loss_log())?;
    write(&dir.join(EMBEDDINGS_FILE), &embeddings_tsv(&names, &result.embeddings))?;
    write(&dir.join(ASSIGNMENTS_FILE), &assignments_tsv(&names, &result.assignments))?;

    let metrics = match graph.labels() {
        Some(labels) => {
            let m = crate::metrics::evaluate(&result.assignments, labels)?;
            write(&dir.join(METRICS_FILE), &m.to_json())?;
            Some(m)
        }
        None => None,
    };
    let epochs = trainer
        .state
        .history
        .iter()
        .map(|r| EpochRow {
            epoch: r.epoch,
            phase: r.phase.as_str().to_string(),
            updated: match r.group {
                UpdateGroup::Network => "network".into(),
                UpdateGroup::Prior => "prior".into(),
            },
            losses: r.report,
        })
        .collect();
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        n_nodes: graph.n_nodes(),
        n_attrs: graph.n_attrs(),
        n_edges: graph.n_edges(),
        k: trainer.k,
        config,
        epochs,
        metrics,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    write(&dir.join(REPORT_FILE), &json)?;
    Ok(RunOutcome {
        report,
        result,
        dir: dir.to_path_buf(),
    })
}

/// Run directory for one seed under `root`.
pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

/// Trains once per seed; returns the per-seed reports in order.
pub fn run_seeds(
    graph: &AttributedGraph,
    meta: &DatasetMeta,
    config: &RunConfig,
    seeds: &[u64],
    root: &Path,
) -> Result<Vec<RunOutcome>> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = RunConfig {
                seed,
                ..config.clone()
            };
            run_training(graph, meta, cfg, &seed_dir(root, seed))
        })
        .collect()
}

/// Per-seed metric rows and their mean as TSV.
pub fn summary_tsv(outcomes: &[RunOutcome]) -> String {
    let mut out = format!("seed\t{}\n", MetricReport::TSV_HEADER);
    let reports: Vec<MetricReport> = outcomes.iter().filter_map(|o| o.report.metrics).collect();
    for o in outcomes {
        if let Some(m) = o.report.metrics {
            let _ = writeln!(out, "{}\t{}", o.report.seed, m.tsv_row());
        }
    }
    if let Some(mean) = MetricReport::mean(&reports) {
        let _ = writeln!(out, "mean\t{}", mean.tsv_row());
    }
    out
}

/// One aggregated row of an embedding-size sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub embedding_dim: usize,
    pub nmi: f64,
    pub ari: f64,
}

pub const SWEEP_FILE: &str = "sweep.tsv";

/// Trains for every embedding size and seed; writes `sweep.tsv` under `root`.
pub fn sweep(
    graph: &AttributedGraph,
    meta: &DatasetMeta,
    config: &RunConfig,
    sizes: &[usize],
    seeds: &[u64],
    root: &Path,
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::Input("sweep needs at least one embedding size and one seed".into()));
    }
    let mut seen = BTreeSet::new();
    for &j in sizes {
        if !seen.insert(j) {
            return Err(Error::Input(format!("embedding size {j} listed twice")));
        }
    }
    if graph.labels().is_none() {
        return Err(Error::Input("sweep needs labels to score runs".into()));
    }
    let mut rows = Vec::new();
    for &j in sizes {
        let cfg = RunConfig {
            embedding_dim: j,
            ..config.clone()
        };
        cfg.validate()?;
        let outcomes = run_seeds(graph, meta, &cfg, seeds, &root.join(format!("j-{j}")))?;
        let reports: Vec<MetricReport> = outcomes.iter().filter_map(|o| o.report.metrics).collect();
        let mean = MetricReport::mean(&reports).expect("labels present");
        rows.push(SweepRow {
            embedding_dim: j,
            nmi: mean.nmi,
            ari: mean.ari,
        });
    }
    let mut out = String::from("j\tnmi\tari\n");
    for r in &rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.embedding_dim, r.nmi, r.ari);
    }
    write(&root.join(SWEEP_FILE), &out)?;
    Ok(rows)
}

/// Raw or PCA-projected embeddings from a checkpoint, as TSV.
pub fn export_embeddings(checkpoint: &Path, projection: Projection) -> Result<String> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let points = match projection {
        Projection::None => ckpt.embeddings,
        Projection::Pca2 => crate::pca::project_2d(&ckpt.embeddings)?,
    };
    Ok(embeddings_tsv(&default_names(points.rows()), &points))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    None,
    Pca2,
}
