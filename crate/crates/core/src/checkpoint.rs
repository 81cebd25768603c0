//! Plain-text checkpoints.
//!
//! ```text
//! vclanc-checkpoint<TAB>1
//! epoch<TAB>150
//! phase<TAB>alternating
//! tensor<TAB>node_w0<TAB>rows<TAB>cols
//! <rows lines of cols tab-separated values>
//! ...
//! ```
//!
//! Tensors appear in the order network weights, then (if initialized)
//! prior means, log variances and logits, then the node posterior means
//! under the name `embeddings`. Values use shortest round-trip formatting,
//! so loading reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm::MixturePrior;
use crate::model::{node_means, ModelParams};
use crate::tensor::DenseMatrix;
use crate::trainer::{Phase, Trainer};

pub const MAGIC: &str = "vclanc-checkpoint";
pub const VERSION: u32 = 1;
pub const EMBEDDINGS: &str = "embeddings";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub phase: Phase,
    pub params: ModelParams,
    pub prior: Option<MixturePrior>,
    pub embeddings: DenseMatrix,
}

fn write_tensor(out: &mut String, name: &str, m: &DenseMatrix) {
    let _ = writeln!(out, "tensor\t{name}\t{}\t{}", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", row.join("\t"));
    }
}

impl Checkpoint {
    /// Snapshot of a trainer's current parameters and node means.
    pub fn capture(trainer: &Trainer) -> Result<Self> {
        Ok(Self {
            epoch: trainer.state.epoch,
            phase: trainer.state.phase,
            params: trainer.state.params.clone(),
            prior: trainer.state.prior.clone(),
            embeddings: node_means(&trainer.ctx, &trainer.state.params)?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}\t{VERSION}");
        let _ = writeln!(out, "epoch\t{}", self.epoch);
        let _ = writeln!(out, "phase\t{}", self.phase.as_str());
        for (name, t) in ModelParams::TENSOR_NAMES.iter().zip(self.params.tensors()) {
            write_tensor(&mut out, name, t);
        }
        if let Some(p) = &self.prior {
            for (name, t) in MixturePrior::TENSOR_NAMES.iter().zip(p.tensors()) {
                write_tensor(&mut out, name, t);
            }
        }
        write_tensor(&mut out, EMBEDDINGS, &self.embeddings);
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Input(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key} line")))?;
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("malformed {key} line {line:?}")))?;
            if k != key {
                return Err(bad(format!("expected {key}, found {k:?}")));
            }
            Ok(v.to_string())
        };
        let version = header(MAGIC)?;
        if version != VERSION.to_string() {
            return Err(bad(format!("unsupported version {version}")));
        }
        let epoch = header("epoch")?
            .parse()
            .map_err(|_| bad("bad epoch".into()))?;
        let phase = match header("phase")?.as_str() {
            "pretrain" => Phase::Pretrain,
            "alternating" => Phase::Alternating,
            other => return Err(bad(format!("unknown phase {other:?}"))),
        };

        let mut tensors: Vec<(String, DenseMatrix)> = Vec::new();
        while let Some(line) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 || parts[0] != "tensor" {
                return Err(bad(format!("expected tensor header, found {line:?}")));
            }
            let rows: usize = parts[2].parse().map_err(|_| bad(format!("bad rows in {line:?}")))?;
            let cols: usize = parts[3].parse().map_err(|_| bad(format!("bad cols in {line:?}")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let row = lines
                    .next()
                    .ok_or_else(|| bad(format!("{}: missing row {r}", parts[1])))?;
                let before = data.len();
                if cols > 0 {
                    for tok in row.split('\t') {
                        data.push(tok.parse::<f64>().map_err(|_| bad(format!("bad value {tok:?}")))?);
                    }
                }
                if data.len() - before != cols {
                    return Err(bad(format!("{}: row {r} has wrong width", parts[1])));
                }
            }
            tensors.push((parts[1].to_string(), DenseMatrix::from_vec(rows, cols, data)?));
        }

        let take = |tensors: &mut Vec<(String, DenseMatrix)>, name: &str| -> Result<DenseMatrix> {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            Ok(tensors.remove(pos).1)
        };
        let mut net = Vec::new();
        for name in ModelParams::TENSOR_NAMES {
            net.push(take(&mut tensors, name)?);
        }
        let (m, hidden) = net[0].shape();
        let n = net[2].rows();
        let latent = net[1].cols() / 2;
        let mut params = ModelParams::zeros(n, m, hidden, latent);
        if params.shapes() != net.iter().map(|t| t.shape()).collect::<Vec<_>>() {
            return Err(bad("inconsistent network tensor shapes".into()));
        }
        for (dst, src) in params.tensors_mut().into_iter().zip(net) {
            *dst = src;
        }
        let has_prior = tensors.iter().any(|(n, _)| n == MixturePrior::TENSOR_NAMES[0]);
        let prior = if has_prior {
            let [a, b, c] = MixturePrior::TENSOR_NAMES;
            Some(MixturePrior::new(
                take(&mut tensors, a)?,
                take(&mut tensors, b)?,
                take(&mut tensors, c)?,
            )?)
        } else {
            None
        };
        let embeddings = take(&mut tensors, EMBEDDINGS)?;
        if let Some((extra, _)) = tensors.first() {
            return Err(bad(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            epoch,
            phase,
            params,
            prior,
            embeddings,
        })
    }

    /// Writes the checkpoint, creating parent directories.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(with_prior: bool) -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(5, 3, 4, 2, &mut rng);
        let prior = with_prior.then(|| {
            MixturePrior::new(
                DenseMatrix::from_rows(&[vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-17]]),
                DenseMatrix::from_rows(&[vec![0.0, -1.25], vec![0.5, 0.7]]),
                DenseMatrix::from_rows(&[vec![0.3, -0.3]]),
            )
            .unwrap()
        });
        Checkpoint {
            epoch: 50,
            phase: if with_prior { Phase::Alternating } else { Phase::Pretrain },
            params,
            prior,
            embeddings: DenseMatrix::from_fn(5, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0)),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for with_prior in [false, true] {
            let c = sample(with_prior);
            let text = c.to_text();
            let back = Checkpoint::parse(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn rejects_damage() {
        let text = sample(true).to_text();
        assert!(Checkpoint::parse(&text.replace("checkpoint\t1", "checkpoint\t9")).is_err());
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::parse(&truncated).is_err());
        assert!(Checkpoint::parse(&text.replacen("tensor\tnode_w0", "tensor\tmystery", 1)).is_err());
    }
}
