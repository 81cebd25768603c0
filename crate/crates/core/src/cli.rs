//! Command-line front end: `train`, `eval`, `embed-export`, `sweep`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::experiment::{
    evaluate_files, export_embeddings, load_graph, output_root, run_seeds, summary_tsv, sweep, Projection,
};
use crate::graph::RunConfig;
use crate::metrics::{MetricReport, NmiNorm};

#[derive(Debug, Parser)]
#[command(name = "vclanc", version, about = "Variational co-embedding clustering of attributed graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset and write a run directory per seed.
    Train(RunArgs),
    /// Score an assignments file against a labels file.
    Eval(EvalArgs),
    /// Print embeddings stored in a checkpoint, optionally projected to 2-D.
    EmbedExport(ExportArgs),
    /// Train for several embedding sizes and tabulate mean NMI and ARI.
    Sweep(RunArgs),
}

/// Dataset, hyperparameter and output flags shared by `train` and `sweep`.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// `key = value` configuration file applied before the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with edges.tsv, features.tsv and optionally labels.tsv.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Edge list file (`src<TAB>dst`), used with --features.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Sparse binary attributes (`node<TAB>attr`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Ground-truth classes (`node<TAB>label`), for scoring.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory holding one `<name>.content` / `<name>.cites` pair.
    #[arg(long)]
    pub planetoid_dir: Option<PathBuf>,
    /// Embedding size; `sweep` takes a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    pub j: Vec<usize>,
    /// Hidden width of both encoders.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Pretraining epochs.
    #[arg(long)]
    pub t1: Option<usize>,
    /// Alternating epochs after the mixture is fitted.
    #[arg(long)]
    pub t2: Option<usize>,
    /// Network epochs out of every ten alternating epochs (0 to 10).
    #[arg(long)]
    pub interval: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the assignment-hardening loss.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Weight of the mutual-distance reward.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Degrees of freedom of the Student-t soft assignment.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Noise draws averaged per reconstruction estimate.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Cluster count (defaults to the number of label classes).
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed for initialization, noise and EM.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seeds; each gets its own run directory.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    pub seeds: Vec<u64>,
    /// Leave self-loops out of the normalized adjacency.
    #[arg(long)]
    pub no_self_loops: bool,
    /// Output root (default: $VCLANC_OUT, else ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub assignments: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Normalize NMI by the geometric mean of the entropies.
    #[arg(long)]
    pub geometric_nmi: bool,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProjectionArg {
    None,
    Pca2,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub projection: ProjectionArg,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$target = v; })*
            };
        }
        take!(hidden => hidden, t1 => t1, t2 => t2, interval => interval, lr => lr,
              omega => omega, beta => beta, alpha => alpha, mc_samples => mc_samples, seed => seed);
        for (src, dst) in [
            (&self.dataset, &mut c.dataset),
            (&self.edges, &mut c.edges),
            (&self.features, &mut c.features),
            (&self.labels, &mut c.labels),
            (&self.planetoid_dir, &mut c.planetoid_dir),
            (&self.out, &mut c.out),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        if self.k.is_some() {
            c.k = self.k;
        }
        if let [j] = self.j.as_slice() {
            c.embedding_dim = *j;
        }
        if self.no_self_loops {
            c.self_loops = false;
        }
        c.validate()?;
        Ok(c)
    }

    fn seed_list(&self, config: &RunConfig) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![config.seed]
        } else {
            self.seeds.clone()
        }
    }
}

fn write_out(path: &std::path::Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Executes a parsed command, printing results to standard output.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            if args.j.len() > 1 {
                return Err(Error::Input("train takes a single --j; use sweep for several".into()));
            }
            let config = args.to_config()?;
            let (graph, meta) = load_graph(&config)?;
            let root = output_root(config.out.as_deref());
            let outcomes = run_seeds(&graph, &meta, &config, &args.seed_list(&config), &root)?;
            for o in &outcomes {
                match o.report.metrics {
                    Some(m) => println!("seed {}\t{}\t{}", o.report.seed, o.dir.display(), m.tsv_row()),
                    None => println!("seed {}\t{}", o.report.seed, o.dir.display()),
                }
            }
            if outcomes.len() > 1 {
                let summary = summary_tsv(&outcomes);
                write_out(&root.join("summary.tsv"), &summary)?;
                print!("{summary}");
            }
        }
        Command::Eval(args) => {
            let norm = if args.geometric_nmi {
                NmiNorm::Geometric
            } else {
                NmiNorm::Arithmetic
            };
            let report = evaluate_files(&args.assignments, &args.labels, norm)?;
            println!("{}", MetricReport::TSV_HEADER);
            println!("{}", report.tsv_row());
            if let Some(out) = &args.out {
                write_out(out, &report.to_json())?;
            }
        }
        Command::EmbedExport(args) => {
            let projection = match args.projection {
                ProjectionArg::None => Projection::None,
                ProjectionArg::Pca2 => Projection::Pca2,
            };
            let tsv = export_embeddings(&args.checkpoint, projection)?;
            match &args.out {
                Some(p) => write_out(p, &tsv)?,
                None => print!("{tsv}"),
            }
        }
        Command::Sweep(args) => {
            if args.j.is_empty() {
                return Err(Error::Input("sweep needs --j with one or more sizes".into()));
            }
            let config = args.to_config()?;
            let (graph, meta) = load_graph(&config)?;
            let root = output_root(config.out.as_deref());
            let rows = sweep(&graph, &meta, &config, &args.j, &args.seed_list(&config), &root)?;
            println!("j\tnmi\tari");
            for r in rows {
                println!("{}\t{}\t{}", r.embedding_dim, r.nmi, r.ari);
            }
        }
    }
    Ok(())
}
