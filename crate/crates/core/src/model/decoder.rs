//! Inner-product decoders and their Bernoulli log-likelihood.
//!
//! The reconstruction probabilities are `sigmoid(⟨z_i, z_j⟩)`. For the
//! adjacency this is an N×N matrix, so the likelihood is evaluated one row at
//! a time and the probability matrix is never held in memory during training.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, DenseMatrix, Function, SparseCsr};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

/// Row count used by the block-wise decoders.
pub const DECODE_BLOCK_ROWS: usize = 512;

/// `sigmoid(Z Zᵀ)` in full. Only for small graphs; see [`decode_blocks`].
pub fn decode_adjacency(z: &DenseMatrix) -> DenseMatrix {
    decode_attributes(z, z)
}

/// `sigmoid(Z_V Z_Aᵀ)` in full.
pub fn decode_attributes(z_nodes: &DenseMatrix, z_attrs: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(z_nodes.rows(), z_attrs.rows(), |i, j| {
        sigmoid(dot(z_nodes.row(i), z_attrs.row(j)))
    })
}

/// Streams `sigmoid(L Rᵀ)` in row blocks of at most `block_rows`, calling
/// `visit(first_row, block)` for each.
pub fn decode_blocks(
    left: &DenseMatrix,
    right: &DenseMatrix,
    block_rows: usize,
    mut visit: impl FnMut(usize, &DenseMatrix) -> Result<()>,
) -> Result<()> {
    if left.cols() != right.cols() {
        return Err(Error::dim(
            "decode_blocks",
            format!("latent sizes {} and {}", left.cols(), right.cols()),
        ));
    }
    let block_rows = block_rows.max(1);
    let mut start = 0;
    while start < left.rows() {
        let end = (start + block_rows).min(left.rows());
        let block = DenseMatrix::from_fn(end - start, right.rows(), |i, j| {
            sigmoid(dot(left.row(start + i), right.row(j)))
        });
        visit(start, &block)?;
        start = end;
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Mean Bernoulli log-likelihood `t log p + (1 - t) log(1 - p)` over all entries,
/// with `p` clamped away from 0 and 1.
pub fn bernoulli_ll(target: &DenseMatrix, prob: &DenseMatrix) -> Result<f64> {
    if target.shape() != prob.shape() {
        return Err(Error::dim(
            "bernoulli_ll",
            format!("target {:?} vs prob {:?}", target.shape(), prob.shape()),
        ));
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = target
        .data()
        .iter()
        .zip(prob.data())
        .map(|(&t, &p)| {
            let p = clamp_prob(p);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(total / target.len() as f64)
}

/// Mean Bernoulli log-likelihood of a sparse binary target under
/// `sigmoid(L Rᵀ)`, differentiable in both factors.
///
/// Inputs: `[left (R×J), right (C×J)]`; the target is R×C. Passing the same
/// variable twice gives the symmetric adjacency decoder.
pub struct InnerProductBernoulli {
    target: Arc<SparseCsr>,
    pos_weight: f64,
}

impl InnerProductBernoulli {
    pub fn new(target: Arc<SparseCsr>, pos_weight: f64) -> Self {
        Self { target, pos_weight }
    }

    fn check(&self, left: &DenseMatrix, right: &DenseMatrix) -> Result<()> {
        if left.cols() != right.cols()
            || left.rows() != self.target.rows()
            || right.rows() != self.target.cols()
        {
            return Err(Error::dim(
                "inner_product_bernoulli",
                format!(
                    "left {:?}, right {:?}, target {}x{}",
                    left.shape(),
                    right.shape(),
                    self.target.rows(),
                    self.target.cols()
                ),
            ));
        }
        Ok(())
    }

    /// Calls `f(i, j, logit, is_positive)` for every entry. Rows of `left`
    /// are visited in tiles so each row of `right` is reused while cached;
    /// within a tile the order is column-major, which is fixed and therefore
    /// reproducible.
    fn for_each_entry(
        &self,
        left: &DenseMatrix,
        right: &DenseMatrix,
        mut f: impl FnMut(usize, usize, f64, bool),
    ) {
        const TILE: usize = 16;
        let mut start = 0;
        while start < left.rows() {
            let end = (start + TILE).min(left.rows());
            let mut cursors = [0usize; TILE];
            for j in 0..right.rows() {
                let rj = right.row(j);
                for (slot, i) in (start..end).enumerate() {
                    let (positives, _) = self.target.row(i);
                    let c = &mut cursors[slot];
                    let is_pos = positives.get(*c) == Some(&j);
                    if is_pos {
                        *c += 1;
                    }
                    f(i, j, dot(left.row(i), rj), is_pos);
                }
            }
            start = end;
        }
    }
}

impl Function for InnerProductBernoulli {
    fn name(&self) -> &'static str {
        "inner_product_bernoulli"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let (left, right) = (inputs[0], inputs[1]);
        self.check(left, right)?;
        let count = left.rows() * right.rows();
        if count == 0 {
            return Ok(DenseMatrix::scalar(0.0));
        }
        let w = self.pos_weight;
        let mut total = 0.0;
        self.for_each_entry(left, right, |_, _, x, pos| {
            let p = clamp_prob(sigmoid(x));
            total += if pos { w * p.ln() } else { (1.0 - p).ln() };
        });
        Ok(DenseMatrix::scalar(total / count as f64))
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        grad_output: &DenseMatrix,
        needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let (left, right) = (inputs[0], inputs[1]);
        let count = (left.rows() * right.rows()).max(1);
        let scale = grad_output.item()? / count as f64;
        let w = self.pos_weight;
        let mut dl = DenseMatrix::zeros(left.rows(), left.cols());
        let mut dr = DenseMatrix::zeros(right.rows(), right.cols());
        self.for_each_entry(left, right, |i, j, x, pos| {
            let p = sigmoid(x);
            if !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p) {
                return;
            }
            let coef = scale * if pos { w * (1.0 - p) } else { -p };
            if needs[0] {
                for (d, r) in dl.row_mut(i).iter_mut().zip(right.row(j)) {
                    *d += coef * r;
                }
            }
            if needs[1] {
                for (d, l) in dr.row_mut(j).iter_mut().zip(left.row(i)) {
                    *d += coef * l;
                }
            }
        });
        Ok(vec![needs[0].then_some(dl), needs[1].then_some(dr)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{finite_diff_check, FD_STEP};
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
    }

    #[test]
    fn zero_embeddings_decode_to_half() {
        let z = DenseMatrix::zeros(4, 3);
        assert!(decode_adjacency(&z).data().iter().all(|&p| p == 0.5));
        let za = rand_matrix(&mut ChaCha8Rng::seed_from_u64(1), 5, 3, 1.0);
        assert!(decode_attributes(&z, &za).data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn saturated_and_orthogonal() {
        let z = DenseMatrix::from_rows(&[vec![10.0, 0.0], vec![10.0, 0.0], vec![0.0, 1.0]]);
        let a = decode_adjacency(&z);
        assert!((a.get(0, 1) - sigmoid(100.0)).abs() < 1e-15);
        assert!(a.get(0, 1) > 1.0 - 1e-15);
        assert_eq!(a.get(0, 2), 0.5);
    }

    #[test]
    fn adjacency_decoder_matches_double_loop_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = rand_matrix(&mut rng, 6, 3, 1.5);
        let a = decode_adjacency(&z);
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for d in 0..3 {
                    s += z.get(i, d) * z.get(j, d);
                }
                assert_eq!(a.get(i, j), sigmoid(s));
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn blocks_cover_full_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zv = rand_matrix(&mut rng, 7, 2, 1.0);
        let za = rand_matrix(&mut rng, 4, 2, 1.0);
        let full = decode_attributes(&zv, &za);
        let mut seen = 0;
        decode_blocks(&zv, &za, 3, |start, block| {
            for i in 0..block.rows() {
                assert_eq!(block.row(i), full.row(start + i));
            }
            seen += block.rows();
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 7);
    }

    #[test]
    fn bernoulli_ll_examples() {
        let t = DenseMatrix::scalar(1.0);
        let ll = bernoulli_ll(&t, &DenseMatrix::scalar(1.0 - PROB_FLOOR)).unwrap();
        assert!(ll.abs() < 1e-6 && ll <= 0.0);
        let ll = bernoulli_ll(&t, &DenseMatrix::scalar(0.5)).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
        // Clamped at both ends.
        assert!(bernoulli_ll(&t, &DenseMatrix::scalar(0.0)).unwrap().is_finite());
    }

    #[test]
    fn bernoulli_ll_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = DenseMatrix::from_fn(4, 4, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
        let p = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(0.01..0.99));
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let (tv, pv) = (t.get(i, j), p.get(i, j));
                acc += if tv == 1.0 { pv.ln() } else { (1.0 - pv).ln() };
            }
        }
        assert!((bernoulli_ll(&t, &p).unwrap() - acc / 16.0).abs() < 1e-12);
    }

    #[test]
    fn fused_op_agrees_with_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let zv = rand_matrix(&mut rng, 5, 3, 1.0);
        let za = rand_matrix(&mut rng, 4, 3, 1.0);
        let target = SparseCsr::binary(5, 4, [(0, 1), (2, 3), (4, 0), (4, 2)]).unwrap();
        let dense = bernoulli_ll(&target.to_dense(), &decode_attributes(&zv, &za)).unwrap();
        let op = InnerProductBernoulli::new(Arc::new(target), 1.0);
        let fused = op.forward(&[&zv, &za]).unwrap().item().unwrap();
        assert!((dense - fused).abs() < 1e-14);
    }

    #[test]
    fn fused_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = Arc::new(SparseCsr::binary(5, 5, [(0, 1), (1, 0), (2, 3), (3, 2), (1, 4), (4, 1)]).unwrap());
        let z0 = rand_matrix(&mut rng, 5, 3, 1.0);
        let eval = |z: &DenseMatrix, pw: f64| {
            let mut tape = Tape::new();
            let v = tape.param(z.clone());
            let ll = tape.apply(InnerProductBernoulli::new(target.clone(), pw), &[v, v]).unwrap();
            let g = tape.backward(ll).unwrap();
            (tape.value(ll).item().unwrap(), g.get(v).unwrap().data().to_vec())
        };
        for pw in [1.0, 3.0] {
            let (_, analytic) = eval(&z0, pw);
            let err = finite_diff_check(
                |p| Ok(eval(&DenseMatrix::from_vec(5, 3, p.to_vec()).unwrap(), pw).0),
                z0.data(),
                &analytic,
                FD_STEP,
            )
            .unwrap();
            assert!(err < 1e-6, "pos_weight {pw}: {err}");
        }
    }
}
