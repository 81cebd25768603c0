//! Times training epochs on a synthetic graph with Cora's shape
//! (2708 nodes, about 1430 attributes, 7 blocks, about 5.4k edges) and
//! extrapolates to the default 300-epoch schedule.

use std::time::Instant;

use vclanc::graph::RunConfig;
use vclanc::synthetic::PlantedPartition;
use vclanc::trainer::Trainer;

fn main() -> vclanc::Result<()> {
    let spec = PlantedPartition {
        n_nodes: 2708,
        blocks: 7,
        p_in: 0.0078,
        p_out: 0.0004,
        attrs_per_block: 204,
        attr_on: 0.05,
        attr_noise: 0.005,
    };
    let graph = spec.generate(0)?;
    println!("{} nodes, {} attributes, {} edges", graph.n_nodes(), graph.n_attrs(), graph.n_edges());

    let config = RunConfig::default();
    let (t1, t2) = (config.t1, config.t2);
    let mut trainer = Trainer::new(&graph, config)?;
    let epochs = 5;

    let start = Instant::now();
    trainer.pretrain(epochs, None)?;
    let pre = start.elapsed().as_secs_f64() / epochs as f64;

    let start = Instant::now();
    trainer.init_priors()?;
    let em = start.elapsed().as_secs_f64();

    let start = Instant::now();
    trainer.alternating_train(epochs, None)?;
    let alt = start.elapsed().as_secs_f64() / epochs as f64;

    println!("pretrain epoch {pre:.2} s, alternating epoch {alt:.2} s, EM {em:.2} s");
    println!("estimated full run: {:.0} s", pre * t1 as f64 + em + alt * t2 as f64);
    Ok(())
}
