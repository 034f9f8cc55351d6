//! Canonical correlation analysis as a linear latent-dimension estimate.
//!
//! Solves `S_XY S_YY^-1 S_YX a = s^2 (S_XX + eps I) a` by reducing it to a
//! symmetric eigenproblem with the Cholesky factor of `S_XX + eps I`, then
//! reports the cumulative output variance `CEV_i = trace(C_{:,1:i} C_{:,1:i}^T)`
//! with `C = S_YX A`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CcaResult {
    /// Generalized eigenvalues, descending, length `k = min(n, m)`.
    pub s2: Vec<f64>,
    /// `n x k`, columns normalized so `a^T (S_XX + eps I) a = 1`.
    pub a: DMatrix<f64>,
    /// `m x k`, `C = S_YX A`.
    pub c: DMatrix<f64>,
    /// Un-normalized cumulative explained variance.
    pub cev: Vec<f64>,
    pub ridge_eps: f64,
    /// Ridge added to `S_YY` before inversion.
    pub ridge_delta: f64,
    /// `trace(S_YY)`, the total output variance.
    pub total_output_variance: f64,
}

/// Sample covariance blocks with mean subtraction and divisor `N - 1`.
pub struct Covariances {
    pub sxx: DMatrix<f64>,
    pub syy: DMatrix<f64>,
    pub syx: DMatrix<f64>,
}

pub fn covariances(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Covariances> {
    let nrows = x.nrows();
    if nrows != y.nrows() {
        return Err(Error::Dimension(format!(
            "X has {} rows, Y has {}",
            nrows,
            y.nrows()
        )));
    }
    if nrows <= 1 {
        return Err(Error::Statistics(format!("need at least two samples, got {nrows}")));
    }
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        c
    };
    let (xc, yc) = (center(x), center(y));
    let denom = (nrows - 1) as f64;
    Ok(Covariances {
        sxx: xc.tr_mul(&xc) / denom,
        syy: yc.tr_mul(&yc) / denom,
        syx: yc.tr_mul(&xc) / denom,
    })
}

/// Scale-aware default ridge, `1e-6 trace(S_XX) / n`.
pub fn default_eps(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.ncols();
    let cov = covariances(x, &DMatrix::zeros(x.nrows(), 1))?;
    Ok(1e-6 * cov.sxx.trace() / n as f64)
}

/// Fits CCA on rows of `x` (`N x n`) and `y` (`N x m`).
pub fn fit_cca(x: &DMatrix<f64>, y: &DMatrix<f64>, eps: f64) -> Result<CcaResult> {
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("ridge eps must be non-negative, got {eps}")));
    }
    let cov = covariances(x, y)?;
    fit_from_covariances(&cov, eps)
}

pub fn fit_from_covariances(cov: &Covariances, eps: f64) -> Result<CcaResult> {
    let n = cov.sxx.nrows();
    let m = cov.syy.nrows();
    let k = n.min(m);

    let delta = 1e-10 * cov.syy.trace() / m as f64;
    let mut syy_r = cov.syy.clone();
    for i in 0..m {
        syy_r[(i, i)] += delta;
    }
    let syy_chol = Cholesky::new(syy_r).ok_or_else(|| {
        Error::Decomposition("S_YY + delta I is not positive definite; outputs are degenerate".into())
    })?;

    let mut sxx_r = cov.sxx.clone();
    for i in 0..n {
        sxx_r[(i, i)] += eps;
    }
    let sxx_chol = Cholesky::new(sxx_r).ok_or_else(|| {
        Error::Decomposition(format!(
            "S_XX + eps I is not positive definite (eps = {eps:e}); increase the ridge"
        ))
    })?;
    let l = sxx_chol.l();

    // G = L^-1 S_XY, then the symmetric operator is G S_YY^-1 G^T
    let sxy = cov.syx.transpose();
    let g = l
        .solve_lower_triangular(&sxy)
        .ok_or_else(|| Error::Decomposition("singular Cholesky factor".into()))?;
    let w = syy_chol.solve(&g.transpose());
    let mut op = &g * w;
    op = (&op + op.transpose()) * 0.5;

    let eig = SymmetricEigen::new(op);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut b = DMatrix::zeros(n, k);
    let mut s2 = Vec::with_capacity(k);
    for (col, &i) in idx.iter().take(k).enumerate() {
        s2.push(eig.eigenvalues[i]);
        let v = eig.eigenvectors.column(i);
        let pivot = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        b.set_column(col, &(v * sign));
    }
    let a = l
        .transpose()
        .solve_upper_triangular(&b)
        .ok_or_else(|| Error::Decomposition("singular Cholesky factor".into()))?;
    let c = &cov.syx * &a;
    let mut cev = Vec::with_capacity(k);
    let mut acc = 0.0;
    for j in 0..k {
        acc += c.column(j).norm_squared();
        cev.push(acc);
    }
    Ok(CcaResult {
        s2,
        a,
        c,
        cev,
        ridge_eps: eps,
        ridge_delta: delta,
        total_output_variance: cov.syy.trace(),
    })
}

impl CcaResult {
    pub fn k(&self) -> usize {
        self.s2.len()
    }

    /// Fraction of the total output variance captured by all `k` canonical
    /// directions, `trace(C C^T) / trace(S_YY)`.
    pub fn explained_fraction_of_total(&self) -> f64 {
        self.cev.last().copied().unwrap_or(0.0) / self.total_output_variance
    }
}

/// `CEV_i / CEV_k`; the last entry is exactly 1.
pub fn cev_curve(res: &CcaResult) -> Result<Vec<f64>> {
    let total = res.cev.last().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err(Error::Statistics(
            "total explained variance is zero; data carry no linear relation".into(),
        ));
    }
    let k = res.cev.len();
    Ok(res
        .cev
        .iter()
        .enumerate()
        .map(|(i, &v)| if i + 1 == k { 1.0 } else { v / total })
        .collect())
}

/// Smallest `i` (1-based) whose normalized CEV reaches `tau`.
pub fn latent_dim_for_threshold(res: &CcaResult, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1], got {tau}")));
    }
    let curve = cev_curve(res)?;
    Ok(curve.iter().position(|&v| v >= tau).map_or(curve.len(), |i| i + 1))
}

/// Per-column standardization using statistics of the first `fit_rows` rows.
pub fn standardize(data: &DMatrix<f64>, fit_rows: usize) -> DMatrix<f64> {
    let mut out = data.clone();
    let rows = fit_rows.clamp(1, data.nrows());
    for mut col in out.column_iter_mut() {
        let head = col.rows(0, rows);
        let mean = head.mean();
        let var = head.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        col.apply(|v| *v = (*v - mean) / sd);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn randn(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = crate::rng::Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
    }

    #[test]
    fn identical_blocks_are_perfectly_correlated() {
        let x = randn(200, 5, 1);
        let res = fit_cca(&x, &x, 1e-8).unwrap();
        assert!(res.s2.iter().all(|s| (s - 1.0).abs() < 1e-6), "{:?}", res.s2);
    }

    #[test]
    fn curve_is_monotone_and_ends_at_one() {
        let x = randn(300, 6, 2);
        let y = &x.columns(0, 3) * DMatrix::from_row_slice(3, 4, &[1., 0., 2., 0., 0., 1., 0., 1., 1., 1., 0., 0.])
            + randn(300, 4, 3) * 0.3;
        let res = fit_cca(&x, &y, 1e-6).unwrap();
        let curve = cev_curve(&res).unwrap();
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*curve.last().unwrap(), 1.0);
        assert_eq!(latent_dim_for_threshold(&res, 1.0).unwrap(), res.k());
        assert!((res.cev[res.k() - 1] - (&res.c * res.c.transpose()).trace()).abs() < 1e-8);
    }

    #[test]
    fn normalization_of_eigenvectors() {
        let x = randn(100, 4, 5);
        let y = randn(100, 3, 6) + x.columns(0, 3);
        let eps = 1e-3;
        let res = fit_cca(&x, &y, eps).unwrap();
        let cov = covariances(&x, &y).unwrap();
        let b = cov.sxx + DMatrix::identity(4, 4) * eps;
        let gram = res.a.transpose() * b * &res.a;
        assert!((gram - DMatrix::identity(3, 3)).abs().max() < 1e-9);
    }

    #[test]
    fn single_sample_is_a_statistics_error() {
        let x = randn(1, 2, 1);
        assert!(matches!(fit_cca(&x, &x, 0.0), Err(Error::Statistics(_))));
    }

    #[test]
    fn bad_threshold_is_rejected() {
        let x = randn(50, 2, 1);
        let res = fit_cca(&x, &x, 1e-6).unwrap();
        assert!(latent_dim_for_threshold(&res, 0.0).is_err());
        assert!(latent_dim_for_threshold(&res, 1.5).is_err());
    }

    #[test]
    fn standardize_uses_head_rows() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 3.0, 100.0, 100.0]);
        let s = standardize(&x, 2);
        assert_eq!(s[(0, 0)], -1.0);
        assert_eq!(s[(1, 0)], 1.0);
    }
}
