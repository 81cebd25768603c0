use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Adam optimizer state for one group of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl AdamState {
    /// Fresh state with zeroed moments shaped like `shapes`.
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, shapes)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[DenseMatrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[DenseMatrix] {
        &self.second
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [&mut DenseMatrix],
    grads: &[&DenseMatrix],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(Error::Contract(format!(
                "adam_step: parameter {i} is {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.first[i].shape()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            md[k] = b1 * md[k] + (1.0 - b1) * gk;
            vd[k] = b2 * vd[k] + (1.0 - b2) * gk * gk;
            let m_hat = md[k] / bc1;
            let v_hat = vd[k] / bc2;
            pd[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = DenseMatrix::from_rows(&[vec![1.5, -2.0]]);
        let before = p.clone();
        let g = DenseMatrix::zeros(1, 2);
        let mut st = AdamState::new(0.002, &[(1, 2)]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = DenseMatrix::scalar(0.0);
        let g = DenseMatrix::scalar(1.0);
        let mut st = AdamState::new(0.002, &[(1, 1)]);
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        let expected = -0.002 * 1.0 / (1.0 + 1e-8);
        assert!((p.item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn three_steps_on_quadratic_match_recurrence() {
        // f(x) = (x - 3)^2, g = 2(x - 3)
        let lr = 0.1;
        let mut p = DenseMatrix::scalar(0.0);
        let mut st = AdamState::new(lr, &[(1, 1)]);

        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);

            let grad = DenseMatrix::scalar(2.0 * (p.item().unwrap() - 3.0));
            adam_step(&mut [&mut p], &[&grad], &mut st).unwrap();
            assert!((p.item().unwrap() - x).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = DenseMatrix::zeros(2, 2);
        let g = DenseMatrix::zeros(1, 2);
        let mut st = AdamState::new(0.1, &[(2, 2)]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut st).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
