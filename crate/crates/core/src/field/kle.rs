//! Truncated Karhunen–Loève expansion of a squared-exponential Gaussian
//! field over the active cell centers.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::FlowGrid;
use crate::error::{Error, Result};

/// `k(d) = variance * exp(-d^2 / (2 length_scale^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceKernel {
    pub variance: f64,
    pub length_scale: f64,
}

impl CovarianceKernel {
    pub fn eval(&self, d2: f64) -> f64 {
        self.variance * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }

    /// Dense covariance over the active cell centers.
    pub fn matrix(&self, grid: &FlowGrid) -> DMatrix<f64> {
        let n = grid.n_active();
        let centers: Vec<(f64, f64)> = (0..n).map(|c| grid.center(c)).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let (dx, dy) = (centers[i].0 - centers[j].0, centers[i].1 - centers[j].1);
            self.eval(dx * dx + dy * dy)
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) || !(self.length_scale > 0.0) {
            return Err(Error::Config(format!(
                "kernel needs variance > 0 and length_scale > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KleBasis {
    eigenvalues: Vec<f64>,
    /// `K x n`, row-major; row `k` is mode `k`.
    modes: Vec<f64>,
    mean_field: Vec<f64>,
}

/// Top-`order` eigenpairs of the kernel covariance, eigenvalues descending.
pub fn build_kle(grid: &FlowGrid, kernel: &CovarianceKernel, order: usize) -> Result<KleBasis> {
    kernel.validate()?;
    let n = grid.n_active();
    if order == 0 || order > n {
        return Err(Error::Dimension(format!(
            "KLE order must lie in 1..={n}, got {order}"
        )));
    }
    let cov = kernel.matrix(grid);
    let eig = SymmetricEigen::new(cov);
    let mut order_idx: Vec<usize> = (0..n).collect();
    order_idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order_idx[0]];
    let bottom = eig.eigenvalues[order_idx[n - 1]];
    // roundoff of a PSD kernel matrix stays far inside this band
    let tol = 1e-8 * top.abs().max(1.0) * n as f64;
    if !top.is_finite() || bottom < -tol {
        return Err(Error::Decomposition(format!(
            "kernel covariance is not positive semi-definite: eigenvalue range [{bottom:e}, {top:e}], condition estimate {:e}",
            top / bottom.abs().max(f64::MIN_POSITIVE)
        )));
    }

    let mut eigenvalues = Vec::with_capacity(order);
    let mut modes = Vec::with_capacity(order * n);
    for &k in &order_idx[..order] {
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        let v = eig.eigenvectors.column(k);
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        modes.extend(v.iter().map(|x| s * x));
    }
    Ok(KleBasis {
        eigenvalues,
        modes,
        mean_field: vec![0.0; n],
    })
}

impl KleBasis {
    pub fn with_mean(mut self, mean_field: Vec<f64>) -> Result<Self> {
        if mean_field.len() != self.n() {
            return Err(Error::Dimension(format!(
                "mean field has length {}, basis has {}",
                mean_field.len(),
                self.n()
            )));
        }
        self.mean_field = mean_field;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.mean_field.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        let n = self.n();
        &self.modes[k * n..(k + 1) * n]
    }

    pub fn mean_field(&self) -> &[f64] {
        &self.mean_field
    }

    /// `mean + sum_k sqrt(lambda_k) xi_k phi_k` for given coefficients.
    pub fn realize(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.order() {
            return Err(Error::Dimension(format!(
                "expected {} KLE coefficients, got {}",
                self.order(),
                xi.len()
            )));
        }
        let mut field = self.mean_field.clone();
        for (k, (&lam, &x)) in self.eigenvalues.iter().zip(xi).enumerate() {
            let a = lam.sqrt() * x;
            if a != 0.0 {
                for (f, m) in field.iter_mut().zip(self.mode(k)) {
                    *f += a * m;
                }
            }
        }
        Ok(field)
    }

    /// Draws one log-transmissivity field using standard-normal coefficients.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.order()).map(|_| rng.sample(StandardNormal)).collect();
        self.realize(&xi).expect("coefficient count matches order")
    }

    pub fn sample_seeded(&self, seed: u64) -> Vec<f64> {
        self.sample(&mut crate::rng::Rng::seed_from_u64(seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::grid::BoundarySpec;

    fn grid(h: usize, w: usize) -> FlowGrid {
        FlowGrid::rectangle(h, w, 1.0, BoundarySpec::default()).unwrap()
    }

    #[test]
    fn full_order_preserves_trace() {
        let g = grid(4, 5);
        let k = CovarianceKernel { variance: 1.7, length_scale: 1.3 };
        let kle = build_kle(&g, &k, g.n_active()).unwrap();
        let s: f64 = kle.eigenvalues().iter().sum();
        assert!((s - 1.7 * 20.0).abs() < 1e-6);
        assert!(kle.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn huge_length_scale_is_rank_one() {
        let g = grid(4, 4);
        let kle = build_kle(&g, &CovarianceKernel { variance: 1.0, length_scale: 1e6 }, 16).unwrap();
        assert!((kle.eigenvalues()[0] - 16.0).abs() < 1e-6);
        assert!(kle.eigenvalues()[1..].iter().all(|&l| l.abs() < 1e-6));
    }

    #[test]
    fn zero_coefficients_return_the_mean() {
        let g = grid(3, 3);
        let kle = build_kle(&g, &CovarianceKernel { variance: 1.0, length_scale: 1.0 }, 4)
            .unwrap()
            .with_mean((0..9).map(|i| i as f64 * 0.1).collect())
            .unwrap();
        assert_eq!(kle.realize(&[0.0; 4]).unwrap(), kle.mean_field());
    }

    #[test]
    fn seeded_samples_are_bit_identical() {
        let g = grid(3, 4);
        let kle = build_kle(&g, &CovarianceKernel { variance: 1.0, length_scale: 2.0 }, 6).unwrap();
        assert_eq!(kle.sample_seeded(5), kle.sample_seeded(5));
        assert_ne!(kle.sample_seeded(5), kle.sample_seeded(6));
    }

    #[test]
    fn bad_order_and_kernel_are_rejected() {
        let g = grid(2, 2);
        let k = CovarianceKernel { variance: 1.0, length_scale: 1.0 };
        assert!(matches!(build_kle(&g, &k, 5), Err(Error::Dimension(_))));
        let bad = CovarianceKernel { variance: 1.0, length_scale: 0.0 };
        assert!(matches!(build_kle(&g, &bad, 2), Err(Error::Config(_))));
    }
}
