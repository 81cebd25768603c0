use crate::error::{Error, Result};

/// Central-difference step used throughout the gradient tests.
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative disagreement between an analytic gradient and central
/// finite differences of `f` around `x`:
/// `max_i |a_i − n_i| / max(1e-8, |a_i| + |n_i|)`.
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64> {
    if x.len() != analytic.len() {
        return Err(Error::dim(
            "finite_diff_check",
            format!("{} coordinates, {} gradient entries", x.len(), analytic.len()),
        ));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "objective not finite near coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Per-coordinate central differences, for diagnostics.
pub fn numeric_gradient(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}
