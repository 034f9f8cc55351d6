//! Training objective: `1/2 MSE + beta KLD + lambda COV`.
//!
//! All reductions run in `f64` regardless of the network scalar type.
//! Training conventions: MSE is the batch mean of squared Euclidean norms,
//! KLD the batch mean of the per-sample KL divergence to `N(0, I)`.
//! Reported values additionally divide by `m` and `r` respectively.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardOutput, Mode, Noise, Real, Tensor, Ved};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub lambda: f64,
}

impl LossWeights {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        let w = Self { beta, lambda };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got beta={} lambda={}",
                self.beta, self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub kld: f64,
    pub cov: f64,
    pub beta: f64,
    pub lambda: f64,
    pub total: f64,
    pub mse_report: f64,
    pub kld_report: f64,
}

impl LossBreakdown {
    pub fn assemble(mse: f64, kld: f64, cov: f64, w: LossWeights, m: usize, r: usize) -> Self {
        Self {
            mse,
            kld,
            cov,
            beta: w.beta,
            lambda: w.lambda,
            total: 0.5 * mse + w.beta * kld + w.lambda * cov,
            mse_report: mse / m as f64,
            kld_report: kld / r as f64,
        }
    }
}

fn check_len(what: &str, len: usize, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 || len != rows * cols {
        return Err(Error::Dimension(format!("{what}: {len} values for a {rows} x {cols} matrix")));
    }
    Ok(())
}

/// Batch mean of `||y - y_hat||^2` (training convention).
pub fn mse_loss<T: Real>(y: &[T], y_hat: &[T], batch: usize, m: usize) -> Result<f64> {
    check_len("y", y.len(), batch, m)?;
    check_len("y_hat", y_hat.len(), batch, m)?;
    let s: f64 = y.iter().zip(y_hat).map(|(a, b)| (a.f64() - b.f64()).powi(2)).sum();
    Ok(s / batch as f64)
}

/// Mean squared error per output feature (reporting convention).
pub fn mse_report<T: Real>(y: &[T], y_hat: &[T], batch: usize, m: usize) -> Result<f64> {
    Ok(mse_loss(y, y_hat, batch, m)? / m as f64)
}

/// Batch mean of `1/2 sum_i (exp h_i + g_i^2 - 1 - h_i)`.
pub fn kld_loss<T: Real>(g: &[T], h: &[T], batch: usize, r: usize) -> Result<f64> {
    check_len("g", g.len(), batch, r)?;
    check_len("h", h.len(), batch, r)?;
    let mut s = 0.0;
    for (g, h) in g.iter().zip(h) {
        let (g, h) = (g.f64(), h.f64());
        if !g.is_finite() || !h.is_finite() {
            return Err(Error::numerical("kld_loss", "non-finite latent statistics"));
        }
        s += 0.5 * (h.exp() + g * g - 1.0 - h);
    }
    Ok(s / batch as f64)
}

/// KLD per latent feature (reporting convention).
pub fn kld_report<T: Real>(g: &[T], h: &[T], batch: usize, r: usize) -> Result<f64> {
    Ok(kld_loss(g, h, batch, r)? / r as f64)
}

/// Covariance of the aggregate code distribution,
/// `diag(mean_b exp h_b) + Cov_b(g_b)` with divisor `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCov {
    pub matrix: DMatrix<f64>,
    /// Batch mean of `g`, kept for the backward pass.
    pub g_mean: Vec<f64>,
}

pub fn aggregate_cov<T: Real>(g: &[T], h: &[T], batch: usize, r: usize) -> Result<AggregateCov> {
    if batch < 2 {
        return Err(Error::Statistics(format!("aggregate covariance needs B >= 2, got {batch}")));
    }
    check_len("g", g.len(), batch, r)?;
    check_len("h", h.len(), batch, r)?;
    let inv_b = 1.0 / batch as f64;
    let mut g_mean = vec![0.0; r];
    for row in g.chunks(r) {
        g_mean.iter_mut().zip(row).for_each(|(m, v)| *m += v.f64() * inv_b);
    }
    let mut cov = DMatrix::zeros(r, r);
    let mut centered = vec![0.0; r];
    for (grow, hrow) in g.chunks(r).zip(h.chunks(r)) {
        for i in 0..r {
            centered[i] = grow[i].f64() - g_mean[i];
        }
        for i in 0..r {
            cov[(i, i)] += hrow[i].f64().exp() * inv_b;
            for j in 0..r {
                cov[(i, j)] += centered[i] * centered[j] * inv_b;
            }
        }
    }
    Ok(AggregateCov { matrix: cov, g_mean })
}

/// `sum_{i != j} c_ij^2 + sum_i (c_ii - 1)^2`.
pub fn cov_penalty(c: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            let d = if i == j { c[(i, j)] - 1.0 } else { c[(i, j)] };
            s += d * d;
        }
    }
    s
}

/// Off-diagonal and diagonal parts of [`cov_penalty`].
pub fn cov_energy_split(c: &DMatrix<f64>) -> (f64, f64) {
    let mut off = 0.0;
    let mut diag = 0.0;
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            if i == j {
                diag += (c[(i, j)] - 1.0).powi(2);
            } else {
                off += c[(i, j)].powi(2);
            }
        }
    }
    (off, diag)
}

/// Gradients of the total loss with respect to `y_hat`, and the direct
/// (not through `z`) gradients with respect to `g` and `h`.
#[derive(Debug, Clone)]
pub struct LossGrads<T> {
    pub d_yhat: Vec<T>,
    pub d_g: Vec<T>,
    pub d_h: Vec<T>,
}

/// Loss components and their gradients for one forward pass.
pub fn loss_and_grads<T: Real>(
    y: &[T],
    out: &ForwardOutput<T>,
    w: LossWeights,
) -> Result<(LossBreakdown, LossGrads<T>)> {
    w.validate()?;
    let (batch, r) = (out.enc.batch, out.enc.r);
    let m = out.y_hat.len() / batch.max(1);
    let (g, h) = (&out.enc.g, &out.enc.h);
    let mse = mse_loss(y, &out.y_hat, batch, m)?;
    let kld = kld_loss(g, h, batch, r)?;
    let ac = aggregate_cov(g, h, batch, r)?;
    let cov = cov_penalty(&ac.matrix);
    let loss = LossBreakdown::assemble(mse, kld, cov, w, m, r);
    if !loss.total.is_finite() {
        return Err(Error::numerical("loss", format!("non-finite total {}", loss.total)));
    }

    let inv_b = 1.0 / batch as f64;
    let d_yhat = out
        .y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| T::of((a.f64() - b.f64()) * inv_b))
        .collect();
    // G = dCOV/dM = 2 (M - I)
    let mut gm = ac.matrix.clone();
    for i in 0..r {
        gm[(i, i)] -= 1.0;
    }
    gm *= 2.0;
    let mut d_g = Vec::with_capacity(batch * r);
    let mut d_h = Vec::with_capacity(batch * r);
    for (grow, hrow) in g.chunks(r).zip(h.chunks(r)) {
        for i in 0..r {
            let mut cov_g = 0.0;
            for j in 0..r {
                cov_g += gm[(i, j)] * (grow[j].f64() - ac.g_mean[j]);
            }
            let gi = grow[i].f64();
            let ehi = hrow[i].f64().exp();
            d_g.push(T::of(w.beta * gi * inv_b + w.lambda * 2.0 * inv_b * cov_g));
            d_h.push(T::of(w.beta * 0.5 * (ehi - 1.0) * inv_b + w.lambda * gm[(i, i)] * ehi * inv_b));
        }
    }
    Ok((loss, LossGrads { d_yhat, d_g, d_h }))
}

/// Runs the forward pass and assembles the loss without touching gradients.
pub fn total_loss<T: Real>(
    model: &mut Ved<T>,
    x: &Tensor<T>,
    y: &[T],
    w: LossWeights,
    noise: Noise<'_, T>,
    mode: Mode,
) -> Result<(LossBreakdown, ForwardOutput<T>)> {
    let out = model.forward(x, noise, mode)?;
    let (loss, _) = loss_and_grads(y, &out, w)?;
    Ok((loss, out))
}

/// Train-mode forward, loss, and backward; parameter gradients are
/// accumulated into the model.
pub fn total_loss_and_backward<T: Real>(
    model: &mut Ved<T>,
    x: &Tensor<T>,
    y: &[T],
    w: LossWeights,
    noise: Noise<'_, T>,
) -> Result<LossBreakdown> {
    let out = model.forward(x, noise, Mode::Train)?;
    let (loss, grads) = loss_and_grads(y, &out, w)?;
    model.backward(&grads.d_yhat, &grads.d_g, &grads.d_h)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_conventions() {
        let y = [1.0f64, 2.0, 2.0];
        let yh = [0.0f64; 3];
        assert_eq!(mse_loss(&y, &yh, 1, 3).unwrap(), 9.0);
        assert_eq!(mse_report(&y, &yh, 1, 3).unwrap(), 3.0);
        assert_eq!(mse_loss(&y, &y, 1, 3).unwrap(), 0.0);
        assert!(mse_loss(&y, &yh[..2], 1, 3).is_err());
    }

    #[test]
    fn kld_simple_values() {
        assert_eq!(kld_loss(&[0.0f64; 4], &[0.0; 4], 2, 2).unwrap(), 0.0);
        assert!((kld_loss(&[1.0f64], &[0.0], 1, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(kld_loss(&[f64::NAN], &[0.0], 1, 1).is_err());
    }

    #[test]
    fn cov_penalty_cases() {
        assert_eq!(cov_penalty(&DMatrix::identity(3, 3)), 0.0);
        assert!((cov_penalty(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0])) - 2.0).abs() < 1e-15);
        assert!((cov_penalty(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate_cov_identical_rows_is_identity() {
        let ac = aggregate_cov(&[0.3f64, -1.0, 0.3, -1.0], &[0.0; 4], 2, 2).unwrap();
        assert!((ac.matrix.clone() - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!(matches!(aggregate_cov(&[0.0f64], &[0.0], 1, 1), Err(Error::Statistics(_))));
    }

    #[test]
    fn aggregate_cov_two_point() {
        let ac = aggregate_cov(&[1.0f64, 0.0, -1.0, 0.0], &[-10.0; 4], 2, 2).unwrap();
        let e = (-10.0f64).exp();
        assert!((ac.matrix[(0, 0)] - 1.0 - e).abs() < 1e-15);
        assert!((ac.matrix[(1, 1)] - e).abs() < 1e-15);
        assert_eq!(ac.matrix[(0, 1)], 0.0);
    }

    #[test]
    fn breakdown_is_linear_in_weights() {
        let a = LossBreakdown::assemble(2.0, 3.0, 4.0, LossWeights::new(0.0, 0.0).unwrap(), 2, 3);
        let b = LossBreakdown::assemble(2.0, 3.0, 4.0, LossWeights::new(0.1, 0.01).unwrap(), 2, 3);
        assert_eq!(a.total, 1.0);
        assert!((b.total - a.total - (0.1 * 3.0 + 0.01 * 4.0)).abs() < 1e-15);
        assert!(LossWeights::new(-1.0, 0.0).is_err());
    }
}
