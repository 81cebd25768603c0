use std::time::Instant;

use vclanc::graph::RunConfig;
use vclanc::metrics::evaluate;
use vclanc::synthetic::PlantedPartition;
use vclanc::trainer::train;

fn main() -> vclanc::Result<()> {
    let spec = PlantedPartition::default();
    for seed in 0..5 {
        let graph = spec.generate(seed)?;
        let config = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let start = Instant::now();
        let (trainer, result) = train(&graph, config)?;
        let report = evaluate(&result.assignments, graph.labels().expect("planted labels"))?;
        let last = trainer.state.history.last().expect("trained");
        println!(
            "seed {seed}: nmi {:.4} ari {:.4} f1 {:.4} final loss {:.4} ({:.1?})",
            report.nmi,
            report.ari,
            report.f1,
            last.report.total,
            start.elapsed()
        );
    }
    Ok(())
}
