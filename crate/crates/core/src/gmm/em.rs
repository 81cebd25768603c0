use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmm::{log_sum_exp, MixturePrior, VARIANCE_FLOOR};
use crate::tensor::DenseMatrix;

const KMEANS_ITERS: usize = 20;
const EM_MAX_ITERS: usize = 100;
const EM_TOL: f64 = 1e-4;
const MAX_RESEEDS: usize = 3;
/// A component whose total responsibility falls below this is degenerate.
const DEGENERATE_MASS: f64 = 1e-8;

/// Result of Lloyd's algorithm.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centers: DenseMatrix,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

/// Result of [`em_fit`].
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub prior: MixturePrior,
    /// Mean per-point log-likelihood after initialization and after every
    /// iteration, one segment per (re)start.
    pub segments: Vec<Vec<f64>>,
    pub iterations: usize,
    pub reseeds: usize,
}

impl GmmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        self.segments
            .last()
            .and_then(|s| s.last())
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// K-means++ seeding followed by `iters` Lloyd iterations.
pub fn kmeans<R: Rng>(points: &DenseMatrix, k: usize, iters: usize, rng: &mut R) -> Result<KMeansFit> {
    let (n, j) = points.shape();
    if k == 0 || n < k {
        return Err(Error::Domain {
            op: "kmeans",
            detail: format!("need at least k = {k} > 0 points, got {n}"),
        });
    }
    let mut centers = DenseMatrix::zeros(k, j);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            while dist[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centers.row(c)));
        }
    }

    let mut labels = vec![0; n];
    for _ in 0..iters {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = nearest(points.row(i), &centers).0;
        }
        let mut sums = DenseMatrix::zeros(k, j);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
    }
    let mut inertia = 0.0;
    for (i, l) in labels.iter_mut().enumerate() {
        let (c, d) = nearest(points.row(i), &centers);
        *l = c;
        inertia += d;
    }
    Ok(KMeansFit {
        centers,
        labels,
        inertia,
    })
}

struct Components {
    means: DenseMatrix,
    vars: DenseMatrix,
    weights: Vec<f64>,
}

impl Components {
    fn from_kmeans(points: &DenseMatrix, fit: &KMeansFit) -> Self {
        let (k, j) = fit.centers.shape();
        let mut vars = DenseMatrix::zeros(k, j);
        let mut counts = vec![0usize; k];
        for (i, &l) in fit.labels.iter().enumerate() {
            counts[l] += 1;
            for d in 0..j {
                let diff = points.get(i, d) - fit.centers.get(l, d);
                vars.data_mut()[l * j + d] += diff * diff;
            }
        }
        let n = points.rows() as f64;
        for c in 0..k {
            let cnt = counts[c].max(1) as f64;
            vars.row_mut(c).iter_mut().for_each(|v| *v = (*v / cnt).max(VARIANCE_FLOOR));
        }
        let weights = counts.iter().map(|&c| (c as f64 / n).max(1.0 / n)).collect::<Vec<_>>();
        let total: f64 = weights.iter().sum();
        Self {
            means: fit.centers.clone(),
            vars,
            weights: weights.into_iter().map(|w| w / total).collect(),
        }
    }

    /// Log joint densities (N×K) and the mean per-point log-likelihood.
    fn e_step(&self, points: &DenseMatrix) -> (DenseMatrix, f64) {
        let n = points.rows();
        let k = self.means.rows();
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let mut log_p = DenseMatrix::zeros(n, k);
        for c in 0..k {
            let mu = self.means.row(c);
            let var = self.vars.row(c);
            let norm: f64 = var.iter().map(|v| ln_2pi + v.ln()).sum();
            let lw = self.weights[c].ln();
            for i in 0..n {
                let m: f64 = points
                    .row(i)
                    .iter()
                    .zip(mu)
                    .zip(var)
                    .map(|((x, m), v)| (x - m) * (x - m) / v)
                    .sum();
                log_p.set(i, c, lw - 0.5 * (norm + m));
            }
        }
        let mut ll = 0.0;
        for i in 0..n {
            let lse = log_sum_exp(log_p.row(i));
            ll += lse;
            log_p.row_mut(i).iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        (log_p, ll / n as f64)
    }

    /// Closed-form maximization; returns the index of a degenerate component if any.
    fn m_step(&mut self, points: &DenseMatrix, gamma: &DenseMatrix) -> Option<usize> {
        let (n, j) = points.shape();
        let k = gamma.cols();
        let mass = gamma.column_sums();
        if let Some(c) = (0..k).find(|&c| mass.get(0, c) < DEGENERATE_MASS) {
            return Some(c);
        }
        let mut means = gamma.t_matmul(points).expect("shapes agree");
        for c in 0..k {
            let m = mass.get(0, c);
            means.row_mut(c).iter_mut().for_each(|v| *v /= m);
        }
        let mut vars = DenseMatrix::zeros(k, j);
        for i in 0..n {
            let x = points.row(i);
            for c in 0..k {
                let g = gamma.get(i, c);
                let mu = means.row(c);
                let row = &mut vars.data_mut()[c * j..(c + 1) * j];
                for d in 0..j {
                    let diff = x[d] - mu[d];
                    row[d] += g * diff * diff;
                }
            }
        }
        for c in 0..k {
            let m = mass.get(0, c);
            vars.row_mut(c).iter_mut().for_each(|v| *v = (*v / m).max(VARIANCE_FLOOR));
        }
        self.means = means;
        self.vars = vars;
        self.weights = (0..k).map(|c| mass.get(0, c) / n as f64).collect();
        None
    }

    /// Moves component `c` onto the point farthest from every other center.
    fn reseed(&mut self, points: &DenseMatrix, c: usize) {
        let (n, j) = points.shape();
        let mut far = (0, -1.0);
        for i in 0..n {
            let d = (0..self.means.rows())
                .filter(|&o| o != c)
                .map(|o| sq_dist(points.row(i), self.means.row(o)))
                .fold(f64::INFINITY, f64::min);
            if d > far.1 {
                far = (i, d);
            }
        }
        self.means.row_mut(c).copy_from_slice(points.row(far.0));
        // Spread the new component over the data's overall scale.
        for d in 0..j {
            let mean = (0..n).map(|i| points.get(i, d)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (points.get(i, d) - mean).powi(2)).sum::<f64>() / n as f64;
            self.vars.set(c, d, var.max(VARIANCE_FLOOR));
        }
        let k = self.weights.len() as f64;
        self.weights.iter_mut().for_each(|w| *w = 1.0 / k);
    }
}

/// Fits a K-component diagonal Gaussian mixture by EM, initialized from
/// K-means++ / Lloyd. Degenerate components are reseeded up to three times.
pub fn em_fit(points: &DenseMatrix, k: usize, seed: u64) -> Result<GmmFit> {
    let n = points.rows();
    if k == 0 || n < k {
        return Err(Error::Domain {
            op: "em_fit",
            detail: format!("need N >= K > 0, got N = {n}, K = {k}"),
        });
    }
    if !points.is_finite() {
        return Err(Error::Numeric("em_fit: non-finite input points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans(points, k, KMEANS_ITERS, &mut rng)?;
    let mut comps = Components::from_kmeans(points, &init);
    let mut segments = vec![Vec::new()];
    let mut reseeds = 0;
    let mut iterations = 0;

    let (mut gamma, ll) = comps.e_step(points);
    segments[0].push(ll);
    while iterations < EM_MAX_ITERS {
        iterations += 1;
        if let Some(bad) = comps.m_step(points, &gamma) {
            if reseeds == MAX_RESEEDS {
                return Err(Error::Numeric(format!(
                    "em_fit: component {bad} still degenerate after {MAX_RESEEDS} reseeds"
                )));
            }
            reseeds += 1;
            comps.reseed(points, bad);
            let (g, ll) = comps.e_step(points);
            gamma = g;
            segments.push(vec![ll]);
            continue;
        }
        let (g, ll) = comps.e_step(points);
        gamma = g;
        let seg = segments.last_mut().expect("non-empty");
        let prev = *seg.last().expect("non-empty");
        seg.push(ll);
        if !ll.is_finite() {
            return Err(Error::Numeric("em_fit: non-finite log-likelihood".into()));
        }
        if (ll - prev).abs() < EM_TOL {
            break;
        }
    }
    let prior = MixturePrior::from_moments(comps.means, &comps.vars, &comps.weights)?;
    Ok(GmmFit {
        prior,
        segments,
        iterations,
        reseeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, sd: f64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..per {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                rows.push(vec![c[0] + sd * dx, c[1] + sd * dy]);
            }
        }
        DenseMatrix::from_rows(&rows)
    }

    #[test]
    fn two_blobs_recovered() {
        let truth = [[-3.0, 0.0], [3.0, 1.0]];
        let pts = blobs(5, &truth, 200, 0.5);
        let fit = em_fit(&pts, 2, 1).unwrap();
        for t in &truth {
            let best = (0..2)
                .map(|c| sq_dist(t, fit.prior.means.row(c)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "center {t:?} missed by {best}");
        }
    }

    #[test]
    fn one_point_per_component() {
        let pts = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![5.0, 5.0], vec![-5.0, 2.0]]);
        let fit = em_fit(&pts, 3, 0).unwrap();
        let mut found = 0;
        for i in 0..3 {
            if (0..3).any(|c| sq_dist(pts.row(i), fit.prior.means.row(c)) < 1e-12) {
                found += 1;
            }
        }
        assert_eq!(found, 3);
        for v in fit.prior.variances().data() {
            assert!((v - VARIANCE_FLOOR).abs() < 1e-12);
        }
    }

    #[test]
    fn single_component_closed_form() {
        let pts = blobs(9, &[[1.0, -2.0]], 50, 1.3);
        let fit = em_fit(&pts, 1, 0).unwrap();
        for d in 0..2 {
            let col: Vec<f64> = (0..50).map(|i| pts.get(i, d)).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
            assert!((fit.prior.means.get(0, d) - mean).abs() < 1e-12);
            assert!((fit.prior.variances().get(0, d) - var).abs() < 1e-10);
        }
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let pts = blobs(3, &[[0.0, 0.0], [1.0, 1.0], [2.0, -1.0]], 40, 0.8);
        let fit = em_fit(&pts, 3, 4).unwrap();
        for seg in &fit.segments {
            for w in seg.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn too_few_points() {
        assert!(em_fit(&DenseMatrix::zeros(2, 2), 3, 0).is_err());
    }

    #[test]
    fn kmeans_separates_blobs() {
        let pts = blobs(8, &[[-10.0, 0.0], [10.0, 0.0]], 30, 0.1);
        let fit = kmeans(&pts, 2, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(fit.labels[..30].iter().all(|&l| l == fit.labels[0]));
        assert!(fit.labels[30..].iter().all(|&l| l == fit.labels[30]));
        assert_ne!(fit.labels[0], fit.labels[30]);
    }
}
