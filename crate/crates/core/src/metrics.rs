//! External clustering-quality measures against ground-truth classes.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts `n[i][j]` of items in predicted cluster `i` and true class `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("contingency rows differ in length".into()));
        }
        let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<u64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let total = row_sums.iter().sum();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn n_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn n_classes(&self) -> usize {
        self.col_sums.len()
    }
}

/// Tabulates predicted clusters against true classes. Ids must be dense
/// from zero; unused ids become empty rows or columns.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<ContingencyTable> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let q = pred.iter().max().map_or(0, |m| m + 1);
    let p = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0u64; p]; q];
    for (&a, &b) in pred.iter().zip(truth) {
        counts[a][b] += 1;
    }
    ContingencyTable::from_counts(counts)
}

fn entropy(sums: &[u64], total: f64) -> f64 {
    sums.iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// How NMI normalizes mutual information by the two entropies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    #[default]
    Arithmetic,
    Geometric,
}

pub fn nmi(table: &ContingencyTable) -> f64 {
    nmi_with(table, NmiNorm::Arithmetic)
}

/// Mutual information over an entropy mean, natural logs. Two constant
/// partitions score 1; exactly one constant partition scores 0.
pub fn nmi_with(table: &ContingencyTable, norm: NmiNorm) -> f64 {
    let n = table.total as f64;
    if table.total == 0 {
        return 1.0;
    }
    let h_pred = entropy(&table.row_sums, n);
    let h_true = entropy(&table.col_sums, n);
    match (h_pred == 0.0, h_true == 0.0) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += (c / n) * (n * c / (table.row_sums[i] as f64 * table.col_sums[j] as f64)).ln();
            }
        }
    }
    let denom = match norm {
        NmiNorm::Arithmetic => (h_pred + h_true) / 2.0,
        NmiNorm::Geometric => (h_pred * h_true).sqrt(),
    };
    (mi / denom).clamp(0.0, 1.0)
}

pub fn purity(table: &ContingencyTable) -> f64 {
    if table.total == 0 {
        return 1.0;
    }
    let hits: u64 = table
        .counts
        .iter()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / table.total as f64
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pair-counting adjusted Rand index. Identical degenerate partitions
/// (all one block, or all singletons) score 1.
pub fn ari(table: &ContingencyTable) -> f64 {
    let total_pairs = pairs(table.total);
    if total_pairs == 0 {
        return 1.0;
    }
    let index: u64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: u64 = table.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: u64 = table.col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = a as f64 * b as f64 / total_pairs as f64;
    let max = (a as f64 + b as f64) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index as f64 - expected) / (max - expected)
}

/// Maximum-benefit one-to-one matching of rows to columns, padding the
/// matrix to square with zeros. Entry `i` of the result is the column
/// matched to row `i`; indices past the real column count are padding.
pub fn hungarian(benefit: &[Vec<i64>]) -> Vec<usize> {
    let rows = benefit.len();
    let cols = benefit.first().map_or(0, Vec::len);
    let size = rows.max(cols);
    if size == 0 {
        return Vec::new();
    }
    let mut square = Matrix::new(size, size, 0i64);
    for (i, row) in benefit.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            square[(i, j)] = v;
        }
    }
    let (_, assignment) = kuhn_munkres(&square);
    assignment.into_iter().take(rows).collect()
}

/// Cluster-to-class matching maximizing agreement on the table.
pub fn best_matching(table: &ContingencyTable) -> Vec<usize> {
    let benefit: Vec<Vec<i64>> = table
        .counts
        .iter()
        .map(|r| r.iter().map(|&c| c as i64).collect())
        .collect();
    hungarian(&benefit)
}

/// Support-weighted precision, recall and F1 after mapping each cluster to
/// a class with `matching`. Clusters matched to a padding index predict no
/// real class.
pub fn weighted_prf(table: &ContingencyTable, matching: &[usize]) -> (f64, f64, f64) {
    let classes = table.n_classes();
    let n = table.total as f64;
    if table.total == 0 {
        return (1.0, 1.0, 1.0);
    }
    let mut tp = vec![0u64; classes];
    let mut predicted = vec![0u64; classes];
    for (i, row) in table.counts.iter().enumerate() {
        let c = matching[i];
        if c < classes {
            tp[c] += row[c];
            predicted[c] += table.row_sums[i];
        }
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let support = table.col_sums[c];
        if support == 0 {
            continue;
        }
        let w = support as f64 / n;
        let tp_c = tp[c] as f64;
        let fp = (predicted[c] - tp[c]) as f64;
        let fn_ = (support - tp[c]) as f64;
        if predicted[c] > 0 {
            p += w * tp_c / (tp_c + fp);
        }
        r += w * tp_c / (tp_c + fn_);
        if tp[c] > 0 {
            f += w * 2.0 * tp_c / (2.0 * tp_c + fp + fn_);
        }
    }
    (p, r, f)
}

/// All measures for one labeling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmi: f64,
    pub purity: f64,
    pub ari: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricReport {
    pub const TSV_HEADER: &'static str = "nmi\tpurity\tari\tprecision\trecall\tf1";

    pub fn from_table(table: &ContingencyTable) -> Self {
        let matching = best_matching(table);
        let (precision, recall, f1) = weighted_prf(table, &matching);
        Self {
            nmi: nmi(table),
            purity: purity(table),
            ari: ari(table),
            precision,
            recall,
            f1,
        }
    }

    pub fn tsv_row(&self) -> String {
        [self.nmi, self.purity, self.ari, self.precision, self.recall, self.f1]
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("\t")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    /// Field-wise mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let k = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Some(MetricReport {
            nmi: sum(|r| r.nmi),
            purity: sum(|r| r.purity),
            ari: sum(|r| r.ari),
            precision: sum(|r| r.precision),
            recall: sum(|r| r.recall),
            f1: sum(|r| r.f1),
        })
    }
}

/// Every measure for `pred` against `truth`.
pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<MetricReport> {
    Ok(MetricReport::from_table(&contingency(pred, truth)?))
}
