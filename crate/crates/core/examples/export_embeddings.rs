//! Trains briefly, saves a checkpoint, and prints the 2-D PCA projection of
//! the node embeddings with each node's cluster, ready for plotting.

use vclanc::checkpoint::Checkpoint;
use vclanc::experiment::{export_embeddings, parse_embeddings_tsv, Projection};
use vclanc::graph::RunConfig;
use vclanc::synthetic::PlantedPartition;
use vclanc::trainer::train;

fn main() -> vclanc::Result<()> {
    let graph = PlantedPartition {
        n_nodes: 90,
        ..PlantedPartition::default()
    }
    .generate(1)?;
    let config = RunConfig {
        t1: 100,
        t2: 50,
        ..RunConfig::default()
    };
    let (trainer, result) = train(&graph, config)?;

    let path = std::env::temp_dir().join("vclanc-export").join("checkpoint.tsv");
    Checkpoint::capture(&trainer)?.save(&path)?;
    let (_, points) = parse_embeddings_tsv(&export_embeddings(&path, Projection::Pca2)?)?;

    println!("node\tpc1\tpc2\tcluster\tblock");
    let labels = graph.labels().expect("planted labels");
    for i in 0..points.rows() {
        println!(
            "{i}\t{:.4}\t{:.4}\t{}\t{}",
            points.get(i, 0),
            points.get(i, 1),
            result.assignments[i],
            labels[i]
        );
    }
    Ok(())
}
