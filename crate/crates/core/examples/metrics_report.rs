//! Scores a clustering against ground truth with every supported measure.

use vclanc::metrics::{best_matching, contingency, nmi_with, MetricReport, NmiNorm};

fn main() -> vclanc::Result<()> {
    let truth = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
    // Cluster ids are arbitrary; the matching step pairs them with classes.
    let pred = [2, 2, 2, 1, 0, 0, 0, 0, 1, 1, 1, 2];

    let table = contingency(&pred, &truth)?;
    println!("contingency (rows: clusters, columns: classes)");
    for row in table.counts() {
        println!("  {row:?}");
    }
    println!("cluster -> class matching: {:?}", best_matching(&table));

    let report = MetricReport::from_table(&table);
    println!("{}", MetricReport::TSV_HEADER);
    println!("{}", report.tsv_row());
    println!("nmi with geometric normalization: {:.4}", nmi_with(&table, NmiNorm::Geometric));
    println!("{}", report.to_json());
    Ok(())
}
