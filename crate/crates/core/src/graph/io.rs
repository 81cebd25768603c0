//! Dataset readers and writers.
//!
//! Native format: three UTF-8 TSV files.
//!
//! * `edges.tsv`: `src\tdst` per line.
//! * `features.tsv`: `node\tattr` per line (COO of the binary attribute matrix).
//!   An optional first line `#dims\tN\tM` fixes the matrix shape; with it,
//!   ids must be integers in `0..N` / `0..M` and are used as-is.
//! * `labels.tsv` (optional): `node\tlabel` per line.
//!
//! Without a `#dims` header, node tokens found in the feature and label files
//! define the node set and are re-indexed in sorted order (numeric when every
//! token is an integer), likewise attribute tokens and label tokens. Lines
//! starting with `#` are otherwise comments.
//!
//! Planetoid format (Cora/Citeseer): `<id> <M binary attrs> <label>` per
//! content row and `<cited> <citing>` per cites row.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";

/// Side information gathered while loading.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetMeta {
    /// Original node tokens, indexed by internal node id.
    pub node_names: Vec<String>,
    /// Original label tokens, indexed by internal class id.
    pub label_names: Vec<String>,
    /// Edge rows read from disk before symmetrization and deduplication.
    pub raw_edge_rows: usize,
    /// Edge rows skipped because an endpoint was unknown (planetoid only).
    pub skipped_edges: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn two_fields<'a>(path: &Path, lineno: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((a, b)),
        _ => Err(Error::Input(format!(
            "{}:{lineno}: expected two fields, got {line:?}",
            path.display()
        ))),
    }
}

/// Sorted index over tokens: numeric order if all parse as integers.
fn index_tokens(tokens: BTreeSet<&str>) -> (Vec<String>, HashMap<String, usize>) {
    let mut names: Vec<String> = tokens.into_iter().map(str::to_owned).collect();
    if names.iter().all(|t| t.parse::<u64>().is_ok()) {
        names.sort_by_key(|t| t.parse::<u64>().expect("checked above"));
    }
    let index = names.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    (names, index)
}

fn parse_dims(text: &str) -> Result<Option<(usize, usize)>> {
    let Some(first) = text.lines().map(str::trim).find(|l| !l.is_empty()) else {
        return Ok(None);
    };
    let Some(rest) = first.strip_prefix("#dims") else {
        return Ok(None);
    };
    let parts: Vec<&str> = rest.split_whitespace().collect();
    match parts.as_slice() {
        [n, m] => match (n.parse(), m.parse()) {
            (Ok(n), Ok(m)) => Ok(Some((n, m))),
            _ => Err(Error::Input(format!("bad #dims header {first:?}"))),
        },
        _ => Err(Error::Input(format!("bad #dims header {first:?}"))),
    }
}

fn parse_index(token: &str, bound: usize, what: &str, path: &Path, lineno: usize) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v < bound => Ok(v),
        _ => Err(Error::Input(format!(
            "{}:{lineno}: {what} {token:?} not in 0..{bound}",
            path.display()
        ))),
    }
}

/// Loads the native three-file format.
pub fn load_dataset(
    edges_path: &Path,
    features_path: &Path,
    labels_path: Option<&Path>,
) -> Result<(AttributedGraph, DatasetMeta)> {
    let features_text = read(features_path)?;
    let edges_text = read(edges_path)?;
    let labels_text = labels_path.map(read).transpose()?;

    let feature_rows: Vec<(usize, &str, &str)> = data_lines(&features_text)
        .map(|(no, l)| two_fields(features_path, no, l).map(|(a, b)| (no, a, b)))
        .collect::<Result<_>>()?;
    let label_rows: Vec<(usize, &str, &str)> = match (&labels_text, labels_path) {
        (Some(t), Some(p)) => data_lines(t)
            .map(|(no, l)| two_fields(p, no, l).map(|(a, b)| (no, a, b)))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let edge_rows: Vec<(usize, &str, &str)> = data_lines(&edges_text)
        .map(|(no, l)| two_fields(edges_path, no, l).map(|(a, b)| (no, a, b)))
        .collect::<Result<_>>()?;

    let (node_names, node_index, n_attrs, feature_pairs) = match parse_dims(&features_text)? {
        Some((n, m)) => {
            let pairs = feature_rows
                .iter()
                .map(|&(no, a, b)| {
                    Ok((
                        parse_index(a, n, "node", features_path, no)?,
                        parse_index(b, m, "attribute", features_path, no)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let names: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            let index = names.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
            (names, index, m, pairs)
        }
        None => {
            let node_tokens: BTreeSet<&str> = feature_rows
                .iter()
                .map(|r| r.1)
                .chain(label_rows.iter().map(|r| r.1))
                .collect();
            let (names, index) = index_tokens(node_tokens);
            let (attr_names, attr_index) =
                index_tokens(feature_rows.iter().map(|r| r.2).collect());
            let pairs = feature_rows
                .iter()
                .map(|&(_, a, b)| (index[a], attr_index[b]))
                .collect();
            (names, index, attr_names.len(), pairs)
        }
    };
    let n_nodes = node_names.len();

    let mut edges = Vec::with_capacity(edge_rows.len());
    for &(no, a, b) in &edge_rows {
        let lookup = |t: &str| {
            node_index.get(t).copied().ok_or_else(|| {
                Error::Input(format!(
                    "{}:{no}: unknown node id {t:?} in edge list",
                    edges_path.display()
                ))
            })
        };
        edges.push((lookup(a)?, lookup(b)?));
    }

    let (labels, label_names) = if let Some(lp) = labels_path {
        let (label_names, label_index) = index_tokens(label_rows.iter().map(|r| r.2).collect());
        let mut labels: Vec<Option<usize>> = vec![None; n_nodes];
        for &(no, node, label) in &label_rows {
            let i = *node_index.get(node).ok_or_else(|| {
                Error::Input(format!("{}:{no}: unknown node id {node:?}", lp.display()))
            })?;
            if labels[i].replace(label_index[label]).is_some() {
                return Err(Error::Input(format!(
                    "{}:{no}: node {node:?} labelled twice",
                    lp.display()
                )));
            }
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| {
                    Error::Input(format!("{}: node {} has no label", lp.display(), node_names[i]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        (Some(labels), label_names)
    } else {
        (None, Vec::new())
    };

    let graph = AttributedGraph::new(n_nodes, n_attrs, edges, feature_pairs, labels)?;
    let meta = DatasetMeta {
        node_names,
        label_names,
        raw_edge_rows: edge_rows.len(),
        skipped_edges: 0,
    };
    Ok((graph, meta))
}

/// Loads `edges.tsv`, `features.tsv` and (if present) `labels.tsv` from `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<(AttributedGraph, DatasetMeta)> {
    let labels = dir.join(LABELS_FILE);
    load_dataset(
        &dir.join(EDGES_FILE),
        &dir.join(FEATURES_FILE),
        labels.exists().then_some(labels.as_path()),
    )
}

/// Writes the native format into `dir`, with a `#dims` header so the shape
/// survives a reload exactly.
pub fn save_dataset(graph: &AttributedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut edges = String::new();
    for (a, b) in graph.edges() {
        let _ = writeln!(edges, "{a}\t{b}");
    }
    let mut features = format!("#dims\t{}\t{}\n", graph.n_nodes(), graph.n_attrs());
    for (i, j, _) in graph.features().iter() {
        let _ = writeln!(features, "{i}\t{j}");
    }
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write(EDGES_FILE, &edges)?;
    write(FEATURES_FILE, &features)?;
    if let Some(labels) = graph.labels() {
        let mut out = String::new();
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{l}");
        }
        write(LABELS_FILE, &out)?;
    }
    Ok(())
}

/// Reads the planetoid `.content` / `.cites` pair.
pub fn load_planetoid_content(
    content_path: &Path,
    cites_path: &Path,
) -> Result<(AttributedGraph, DatasetMeta)> {
    let content = read(content_path)?;
    let cites = read(cites_path)?;

    let mut node_index: HashMap<String, usize> = HashMap::new();
    let mut node_names = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();
    let mut label_names = Vec::new();
    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut n_attrs: Option<usize> = None;

    for (no, line) in data_lines(&content) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::Input(format!(
                "{}:{no}: content row needs an id and a label",
                content_path.display()
            )));
        }
        let attrs = &fields[1..fields.len() - 1];
        match n_attrs {
            None => n_attrs = Some(attrs.len()),
            Some(m) if m != attrs.len() => {
                return Err(Error::Input(format!(
                    "{}:{no}: {} attribute columns, expected {m}",
                    content_path.display(),
                    attrs.len()
                )))
            }
            Some(_) => {}
        }
        let id = fields[0].to_owned();
        if node_index.contains_key(&id) {
            return Err(Error::Input(format!(
                "{}:{no}: duplicate node id {id:?}",
                content_path.display()
            )));
        }
        let node = node_names.len();
        node_index.insert(id.clone(), node);
        node_names.push(id);

        for (j, a) in attrs.iter().enumerate() {
            match *a {
                "0" => {}
                "1" => features.push((node, j)),
                other => {
                    let v: f64 = other.parse().map_err(|_| {
                        Error::Input(format!(
                            "{}:{no}: non-numeric attribute {other:?}",
                            content_path.display()
                        ))
                    })?;
                    if v != 0.0 {
                        features.push((node, j));
                    }
                }
            }
        }

        let label = fields[fields.len() - 1];
        let next = label_names.len();
        let l = *label_index.entry(label.to_owned()).or_insert_with(|| {
            label_names.push(label.to_owned());
            next
        });
        labels.push(l);
    }

    let mut edges = Vec::new();
    let mut raw = 0;
    let mut skipped = 0;
    for (no, line) in data_lines(&cites) {
        let (cited, citing) = two_fields(cites_path, no, line)?;
        raw += 1;
        match (node_index.get(cited), node_index.get(citing)) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => skipped += 1,
        }
    }

    let n = node_names.len();
    let graph = AttributedGraph::new(n, n_attrs.unwrap_or(0), edges, features, Some(labels))?;
    Ok((
        graph,
        DatasetMeta {
            node_names,
            label_names,
            raw_edge_rows: raw,
            skipped_edges: skipped,
        },
    ))
}

/// Finds `<name>.content` and `<name>.cites` in `dir`. With no name, the
/// directory must hold exactly one `.content` file.
pub fn load_planetoid_dir(dir: &Path, name: Option<&str>) -> Result<(AttributedGraph, DatasetMeta)> {
    let stem: String = match name {
        Some(n) => n.to_owned(),
        None => {
            let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            let stems: Vec<String> = entries
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "content"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            match stems.as_slice() {
                [one] => one.clone(),
                _ => {
                    return Err(Error::Input(format!(
                        "{} must contain exactly one .content file (found {})",
                        dir.display(),
                        stems.len()
                    )))
                }
            }
        }
    };
    let content: PathBuf = dir.join(format!("{stem}.content"));
    let cites: PathBuf = dir.join(format!("{stem}.cites"));
    load_planetoid_content(&content, &cites)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_edges_three_nodes() {
        let d = tempfile::tempdir().unwrap();
        let e = write(d.path(), "e.tsv", "");
        let f = write(d.path(), "f.tsv", "a\tx\nb\ty\nc\tx\n");
        let (g, _) = load_dataset(&e, &f, None).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.adjacency().nnz(), 0);
        assert_eq!(g.n_attrs(), 2);
    }

    #[test]
    fn repeated_edges_collapse() {
        let d = tempfile::tempdir().unwrap();
        let e = write(d.path(), "e.tsv", "0\t1\n1\t0\n0\t1\n");
        let f = write(d.path(), "f.tsv", "0\t0\n1\t0\n");
        let (g, meta) = load_dataset(&e, &f, None).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(meta.raw_edge_rows, 3);
    }

    #[test]
    fn unknown_edge_endpoint_is_input_error() {
        let d = tempfile::tempdir().unwrap();
        let e = write(d.path(), "e.tsv", "0\t9\n");
        let f = write(d.path(), "f.tsv", "0\t0\n1\t0\n");
        assert!(matches!(load_dataset(&e, &f, None), Err(Error::Input(_))));
    }

    #[test]
    fn dims_header_bounds_checked() {
        let d = tempfile::tempdir().unwrap();
        let e = write(d.path(), "e.tsv", "");
        let f = write(d.path(), "f.tsv", "#dims\t2\t2\n0\t5\n");
        assert!(matches!(load_dataset(&e, &f, None), Err(Error::Input(_))));
    }

    #[test]
    fn native_round_trip_is_exact() {
        let d = tempfile::tempdir().unwrap();
        let e = write(d.path(), "e.tsv", "n1\tn2\nn2\tn3\n");
        let f = write(d.path(), "f.tsv", "n1\ta\nn2\tb\nn3\ta\nn3\tc\n");
        let l = write(d.path(), "l.tsv", "n1\tred\nn2\tblue\nn3\tred\n");
        let (g1, meta) = load_dataset(&e, &f, Some(&l)).unwrap();
        assert_eq!(meta.label_names, vec!["blue", "red"]);

        let out1 = d.path().join("one");
        save_dataset(&g1, &out1).unwrap();
        let (g2, _) = load_dataset_dir(&out1).unwrap();
        assert_eq!(g1, g2);

        let out2 = d.path().join("two");
        save_dataset(&g2, &out2).unwrap();
        for name in [EDGES_FILE, FEATURES_FILE, LABELS_FILE] {
            assert_eq!(
                fs::read(out1.join(name)).unwrap(),
                fs::read(out2.join(name)).unwrap()
            );
        }
    }

    #[test]
    fn planetoid_toy() {
        let d = tempfile::tempdir().unwrap();
        let c = write(
            d.path(),
            "toy.content",
            "31\t1\t0\t0\tTheory\n7\t0\t1\t1\tAI\n99\t0\t0\t1\tTheory\n",
        );
        let s = write(d.path(), "toy.cites", "31\t7\n5\t31\n");
        let (g, meta) = load_planetoid_content(&c, &s).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.n_attrs(), 3);
        assert_eq!(g.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(g.k_clusters(), Some(2));
        assert_eq!(meta.skipped_edges, 1);
        assert_eq!(meta.raw_edge_rows, 2);
        assert_eq!(meta.node_names, vec!["31", "7", "99"]);

        let (g2, _) = load_planetoid_dir(d.path(), None).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn planetoid_duplicate_id_rejected() {
        let d = tempfile::tempdir().unwrap();
        let c = write(d.path(), "x.content", "1\t1\tA\n1\t0\tB\n");
        let s = write(d.path(), "x.cites", "");
        assert!(matches!(
            load_planetoid_content(&c, &s),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn planetoid_ragged_columns_rejected() {
        let d = tempfile::tempdir().unwrap();
        let c = write(d.path(), "x.content", "1\t1\t0\tA\n2\t0\tB\n");
        let s = write(d.path(), "x.cites", "");
        assert!(matches!(
            load_planetoid_content(&c, &s),
            Err(Error::Input(_))
        ));
    }
}
