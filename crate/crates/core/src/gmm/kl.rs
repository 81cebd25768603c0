//! Closed-form KL terms of the evidence lower bound.

use crate::error::{Error, Result};
use crate::gmm::{log_softmax, MixturePrior, GAMMA_FLOOR};
use crate::tensor::{DenseMatrix, Function};

/// Weighted KL between diagonal Gaussian posteriors and mixture components:
///
/// `scale · Σ_i Σ_c w_ic Σ_j [σ²_ij/σ̂²_cj + (μ_ij − μ̂_cj)²/σ̂²_cj − log(σ²_ij/σ̂²_cj) − 1]`
///
/// Inputs: `[μ (N×J), log σ² (N×J), μ̂ (K×J), log σ̂² (K×J)]`. The weights
/// are constants.
pub struct GaussianKl {
    weights: DenseMatrix,
    scale: f64,
}

impl GaussianKl {
    pub fn new(weights: DenseMatrix, scale: f64) -> Self {
        Self { weights, scale }
    }

    /// Node term: weights γ, scale `1/(2NKJ)`.
    pub fn node_mixture(gamma: DenseMatrix, latent: usize) -> Self {
        let (n, k) = gamma.shape();
        let scale = 1.0 / (2.0 * (n * k * latent).max(1) as f64);
        Self::new(gamma, scale)
    }

    /// Attribute term against one fixed Gaussian: scale `1/(2MJ)`.
    pub fn attr_prior(n_attrs: usize, latent: usize) -> Self {
        let scale = 1.0 / (2.0 * (n_attrs * latent).max(1) as f64);
        Self::new(DenseMatrix::filled(n_attrs, 1, 1.0), scale)
    }

    fn check(&self, inputs: &[&DenseMatrix]) -> Result<()> {
        let (mu, lv, pm, plv) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        if mu.shape() != lv.shape()
            || pm.shape() != plv.shape()
            || mu.cols() != pm.cols()
            || self.weights.shape() != (mu.rows(), pm.rows())
        {
            return Err(Error::dim(
                "gaussian_kl",
                format!(
                    "posterior {:?}/{:?}, prior {:?}/{:?}, weights {:?}",
                    mu.shape(),
                    lv.shape(),
                    pm.shape(),
                    plv.shape(),
                    self.weights.shape()
                ),
            ));
        }
        Ok(())
    }
}

impl Function for GaussianKl {
    fn name(&self) -> &'static str {
        "gaussian_kl"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        self.check(inputs)?;
        let (mu, lv, pm, plv) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let mut total = 0.0;
        for i in 0..mu.rows() {
            for c in 0..pm.rows() {
                let w = self.weights.get(i, c);
                if w == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for j in 0..mu.cols() {
                    let d = mu.get(i, j) - pm.get(c, j);
                    let log_ratio = lv.get(i, j) - plv.get(c, j);
                    s += log_ratio.exp() + d * d * (-plv.get(c, j)).exp() - log_ratio - 1.0;
                }
                total += w * s;
            }
        }
        Ok(DenseMatrix::scalar(self.scale * total))
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        grad_output: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let (mu, lv, pm, plv) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let s = self.scale * grad_output.item()?;
        let mut d_mu = DenseMatrix::zeros(mu.rows(), mu.cols());
        let mut d_lv = DenseMatrix::zeros(lv.rows(), lv.cols());
        let mut d_pm = DenseMatrix::zeros(pm.rows(), pm.cols());
        let mut d_plv = DenseMatrix::zeros(plv.rows(), plv.cols());
        for i in 0..mu.rows() {
            for c in 0..pm.rows() {
                let w = s * self.weights.get(i, c);
                if w == 0.0 {
                    continue;
                }
                for j in 0..mu.cols() {
                    let d = mu.get(i, j) - pm.get(c, j);
                    let inv_pv = (-plv.get(c, j)).exp();
                    let ratio = (lv.get(i, j) - plv.get(c, j)).exp();
                    let g_mu = w * 2.0 * d * inv_pv;
                    d_mu.data_mut()[i * mu.cols() + j] += g_mu;
                    d_pm.data_mut()[c * pm.cols() + j] -= g_mu;
                    d_lv.data_mut()[i * lv.cols() + j] += w * (ratio - 1.0);
                    d_plv.data_mut()[c * plv.cols() + j] += w * (1.0 - ratio - d * d * inv_pv);
                }
            }
        }
        Ok(vec![Some(d_mu), Some(d_lv), Some(d_pm), Some(d_plv)])
    }
}

/// `scale · Σ_i Σ_c γ_ic log(γ_ic / π_c)` with `π = softmax(logits)`.
/// Input: `[logits (1×K)]`; γ is a constant, floored inside the log.
pub struct CategoricalKl {
    gamma: DenseMatrix,
    scale: f64,
}

impl CategoricalKl {
    /// Scale `1/(NK)`.
    pub fn new(gamma: DenseMatrix) -> Self {
        let (n, k) = gamma.shape();
        Self {
            scale: 1.0 / (n * k).max(1) as f64,
            gamma,
        }
    }
}

impl Function for CategoricalKl {
    fn name(&self) -> &'static str {
        "categorical_kl"
    }

    fn forward(&self, inputs: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let logits = inputs[0];
        if logits.shape() != (1, self.gamma.cols()) {
            return Err(Error::dim(
                "categorical_kl",
                format!("logits {:?} for γ {:?}", logits.shape(), self.gamma.shape()),
            ));
        }
        let log_pi = log_softmax(logits.data());
        let mut total = 0.0;
        for i in 0..self.gamma.rows() {
            for (c, &g) in self.gamma.row(i).iter().enumerate() {
                total += g * (g.max(GAMMA_FLOOR).ln() - log_pi[c]);
            }
        }
        Ok(DenseMatrix::scalar(self.scale * total))
    }

    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        _output: &DenseMatrix,
        grad_output: &DenseMatrix,
        _needs: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let pi: Vec<f64> = log_softmax(inputs[0].data()).into_iter().map(f64::exp).collect();
        let col = self.gamma.column_sums();
        let mass: f64 = col.sum();
        let s = self.scale * grad_output.item()?;
        let grad = DenseMatrix::from_fn(1, pi.len(), |_, c| s * (mass * pi[c] - col.get(0, c)));
        Ok(vec![Some(grad)])
    }
}

/// Attribute-side KL against `N(0, prior_var · I)`, normalized by `1/(2MJ)`.
pub fn kl_attr_prior(mean: &DenseMatrix, log_var: &DenseMatrix, prior_var: f64) -> Result<f64> {
    let op = GaussianKl::attr_prior(mean.rows(), mean.cols());
    let pm = DenseMatrix::zeros(1, mean.cols());
    let plv = DenseMatrix::filled(1, mean.cols(), prior_var.ln());
    op.forward(&[mean, log_var, &pm, &plv])?.item()
}

/// γ-weighted node KL against the mixture, normalized by `1/(2NKJ)`.
pub fn kl_node_mixture(
    mean: &DenseMatrix,
    log_var: &DenseMatrix,
    gamma: &DenseMatrix,
    prior: &MixturePrior,
) -> Result<f64> {
    let op = GaussianKl::node_mixture(gamma.clone(), mean.cols());
    op.forward(&[mean, log_var, &prior.means, &prior.log_vars])?
        .item()
}

/// `(1/(NK)) Σ γ log(γ/π)` for explicit weights π.
pub fn kl_categorical(gamma: &DenseMatrix, weights: &[f64]) -> Result<f64> {
    let logits = DenseMatrix::from_vec(1, weights.len(), weights.iter().map(|w| w.ln()).collect())?;
    CategoricalKl::new(gamma.clone()).forward(&[&logits])?.item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::responsibilities;
    use crate::tensor::gradcheck::{finite_diff_check, FD_STEP};
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
    }

    #[test]
    fn attr_prior_closed_forms() {
        let kl = kl_attr_prior(&DenseMatrix::zeros(3, 2), &DenseMatrix::zeros(3, 2), 1.0).unwrap();
        assert_eq!(kl, 0.0);
        let kl = kl_attr_prior(&DenseMatrix::scalar(1.0), &DenseMatrix::scalar(0.0), 1.0).unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn node_mixture_identity_cases() {
        let mu = DenseMatrix::from_rows(&[vec![0.3, -0.1], vec![1.0, 2.0]]);
        let lv = DenseMatrix::from_rows(&[vec![-0.5, 0.2], vec![0.1, 0.0]]);
        // K = 1, posterior equal to prior for a single point.
        let prior = MixturePrior::new(
            mu.slice_cols(0, 2).unwrap().transpose().transpose(),
            lv.clone(),
            DenseMatrix::zeros(1, 2),
        )
        .unwrap();
        let gamma = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(kl_node_mixture(&mu, &lv, &gamma, &prior).unwrap().abs() < 1e-15);

        let single = MixturePrior::new(
            DenseMatrix::from_rows(&[vec![0.3, -0.1]]),
            DenseMatrix::from_rows(&[vec![-0.5, 0.2]]),
            DenseMatrix::zeros(1, 1),
        )
        .unwrap();
        let kl = kl_node_mixture(
            &mu.slice_cols(0, 2).unwrap().transpose().slice_cols(0, 1).unwrap().transpose(),
            &lv.transpose().slice_cols(0, 1).unwrap().transpose(),
            &DenseMatrix::scalar(1.0),
            &single,
        )
        .unwrap();
        assert!(kl.abs() < 1e-15);
    }

    #[test]
    fn node_mixture_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, k, j) = (3, 2, 2);
        let mu = rand_matrix(&mut rng, n, j, 1.0);
        let lv = rand_matrix(&mut rng, n, j, 0.5);
        let prior = MixturePrior::new(
            rand_matrix(&mut rng, k, j, 1.0),
            rand_matrix(&mut rng, k, j, 0.5),
            rand_matrix(&mut rng, 1, k, 1.0),
        )
        .unwrap();
        let gamma = responsibilities(&mu, &prior).unwrap().into_matrix();

        let mut acc = 0.0;
        for i in 0..n {
            for c in 0..k {
                for d in 0..j {
                    let var = lv.get(i, d).exp();
                    let pvar = prior.log_vars.get(c, d).exp();
                    let diff = mu.get(i, d) - prior.means.get(c, d);
                    acc += gamma.get(i, c)
                        * (var / pvar + diff * diff / pvar - (var / pvar).ln() - 1.0);
                }
            }
        }
        let expected = acc / (2.0 * (n * k * j) as f64);
        let got = kl_node_mixture(&mu, &lv, &gamma, &prior).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn categorical_cases() {
        let gamma = DenseMatrix::from_rows(&[vec![0.2, 0.8], vec![0.2, 0.8]]);
        assert!(kl_categorical(&gamma, &[0.2, 0.8]).unwrap().abs() < 1e-15);
        let gamma = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let kl = kl_categorical(&gamma, &[0.5, 0.5]).unwrap();
        assert!((kl - 2f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn categorical_matches_scalar_loop() {
        let gamma = DenseMatrix::from_rows(&[vec![0.1, 0.6, 0.3], vec![0.5, 0.25, 0.25]]);
        let pi = [0.2, 0.3, 0.5];
        let mut acc = 0.0;
        for i in 0..2 {
            for c in 0..3 {
                let g = gamma.get(i, c);
                acc += g * (g / pi[c]).ln();
            }
        }
        let got = kl_categorical(&gamma, &pi).unwrap();
        assert!((got - acc / 6.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (n, k, j) = (4, 3, 2);
        let mu = rand_matrix(&mut rng, n, j, 1.0);
        let lv = rand_matrix(&mut rng, n, j, 0.5);
        let pm = rand_matrix(&mut rng, k, j, 1.0);
        let plv = rand_matrix(&mut rng, k, j, 0.5);
        let logits = rand_matrix(&mut rng, 1, k, 1.0);
        let gamma = Responsibilities_for_test::make(&mut rng, n, k);

        let shapes = [(n, j), (n, j), (k, j), (k, j), (1, k)];
        let eval = |flat: &[f64]| -> (f64, Vec<f64>) {
            let mut off = 0;
            let mut tape = Tape::new();
            let mut vars = Vec::new();
            for &(r, c) in &shapes {
                let m = DenseMatrix::from_vec(r, c, flat[off..off + r * c].to_vec()).unwrap();
                off += r * c;
                vars.push(tape.param(m));
            }
            let a = tape
                .apply(GaussianKl::node_mixture(gamma.clone(), j), &[vars[0], vars[1], vars[2], vars[3]])
                .unwrap();
            let b = tape.apply(CategoricalKl::new(gamma.clone()), &[vars[4]]).unwrap();
            let loss = tape.linear_combination(&[(1.0, a), (0.7, b)]).unwrap();
            let g = tape.backward(loss).unwrap();
            let grad = vars.iter().flat_map(|v| g.get(*v).unwrap().data().to_vec()).collect();
            (tape.value(loss).item().unwrap(), grad)
        };
        let flat: Vec<f64> = [&mu, &lv, &pm, &plv, &logits]
            .iter()
            .flat_map(|m| m.data().to_vec())
            .collect();
        let (_, analytic) = eval(&flat);
        let err = finite_diff_check(|p| Ok(eval(p).0), &flat, &analytic, FD_STEP).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[allow(non_camel_case_types)]
    struct Responsibilities_for_test;
    impl Responsibilities_for_test {
        fn make(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DenseMatrix {
            let mut m = DenseMatrix::from_fn(n, k, |_, _| rng.random_range(0.05..1.0));
            for i in 0..n {
                let s: f64 = m.row(i).iter().sum();
                m.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
            m
        }
    }
}
