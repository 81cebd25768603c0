//! Trains on a planetoid-format dataset (Cora, Citeseer) and writes a run
//! directory per seed.
//!
//! ```text
//! cargo run --release --example train_planetoid -- data/cora 3
//! ```

use std::path::PathBuf;

use vclanc::experiment::{output_root, run_seeds, summary_tsv};
use vclanc::graph::{load_planetoid_dir, RunConfig};

fn main() -> vclanc::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from) else {
        eprintln!("usage: train_planetoid <planetoid-dir> [n-seeds]");
        std::process::exit(1);
    };
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let (graph, meta) = load_planetoid_dir(&dir, None)?;
    println!(
        "{} nodes, {} attributes, {} edges, {} classes",
        graph.n_nodes(),
        graph.n_attrs(),
        graph.n_edges(),
        graph.k_clusters().unwrap_or(0)
    );
    let config = RunConfig::default();
    let root = output_root(None).join(dir.file_name().unwrap_or_default());
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let outcomes = run_seeds(&graph, &meta, &config, &seeds, &root)?;
    print!("{}", summary_tsv(&outcomes));
    Ok(())
}
