//! Sweeps the embedding size on a planted-partition graph and tabulates
//! mean NMI and ARI per size.

use vclanc::experiment::sweep;
use vclanc::graph::{DatasetMeta, RunConfig};
use vclanc::synthetic::PlantedPartition;

fn main() -> vclanc::Result<()> {
    let graph = PlantedPartition::default().generate(3)?;
    let config = RunConfig {
        t1: 100,
        t2: 50,
        ..RunConfig::default()
    };
    let root = std::env::temp_dir().join("vclanc-embedding-sweep");
    let rows = sweep(&graph, &DatasetMeta::default(), &config, &[2, 4, 8, 16, 32], &[0, 1], &root)?;
    println!("j\tnmi\tari");
    for r in rows {
        println!("{}\t{:.4}\t{:.4}", r.embedding_dim, r.nmi, r.ari);
    }
    println!("run directories under {}", root.display());
    Ok(())
}
