//! Two-component principal-component projection for embedding export.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Principal axes of a point cloud.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One component per row, unit length, by decreasing variance.
    pub components: DenseMatrix,
    pub variances: Vec<f64>,
}

/// Fits the top `n_components` axes of the sample covariance. Each axis is
/// signed so that its largest-magnitude loading is positive.
pub fn fit(points: &DenseMatrix, n_components: usize) -> Result<Pca> {
    let (n, j) = points.shape();
    if n == 0 || n_components == 0 || n_components > j {
        return Err(Error::Input(format!(
            "cannot take {n_components} components of {n} points in {j} dimensions"
        )));
    }
    let mean: Vec<f64> = (0..j)
        .map(|d| (0..n).map(|i| points.get(i, d)).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, j, |i, d| points.get(i, d) - mean[d]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = DenseMatrix::zeros(n_components, j);
    let mut variances = Vec::with_capacity(n_components);
    for (row, &idx) in order.iter().take(n_components).enumerate() {
        let axis = eig.eigenvectors.column(idx);
        let mut lead = 0;
        for d in 1..j {
            if axis[d].abs() > axis[lead].abs() {
                lead = d;
            }
        }
        let sign = if axis[lead] < 0.0 { -1.0 } else { 1.0 };
        for d in 0..j {
            components.set(row, d, sign * axis[d]);
        }
        variances.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(Pca {
        mean,
        components,
        variances,
    })
}

impl Pca {
    pub fn transform(&self, points: &DenseMatrix) -> Result<DenseMatrix> {
        if points.cols() != self.mean.len() {
            return Err(Error::dim(
                "pca_transform",
                format!("points of width {} vs fitted width {}", points.cols(), self.mean.len()),
            ));
        }
        let centered = DenseMatrix::from_fn(points.rows(), points.cols(), |i, d| points.get(i, d) - self.mean[d]);
        centered.matmul_t(&self.components)
    }
}

/// Projects onto the first two principal axes.
pub fn project_2d(points: &DenseMatrix) -> Result<DenseMatrix> {
    fit(points, 2)?.transform(points)
}
