//! Post-training diagnostics: per-feature reconstruction quality,
//! decoded prior noise against test marginals, and the empirical latent
//! code covariance.
//!
//! The report builders work on plain row-major arrays; the [`CodeEncoder`]
//! and [`CodeDecoder`] traits let tests swap in analytic stand-ins for a
//! trained network.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::cov_energy_split;
use crate::nn::{Noise, Real, Ved};
use crate::rng;
use crate::train::PreparedData;

pub const KDE_POINTS: usize = 256;

/// Gaussian kernel density estimate on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scott's rule bandwidth `sigma * n^(-1/5)`, grid from `min - 3 sigma` to
/// `max + 3 sigma`. Constant samples fall back to a small positive width.
pub fn kde(samples: &[f64]) -> Result<KdeCurve> {
    if samples.len() < 2 {
        return Err(Error::Statistics("density estimate needs at least 2 samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite sample in density estimate".into()));
    }
    let n = samples.len() as f64;
    let (mean, mut sd) = mean_std(samples);
    if sd <= 0.0 {
        sd = 1e-3 * mean.abs().max(1.0);
    }
    let bw = sd * n.powf(-0.2);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * sd;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * sd;
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..KDE_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (KDE_POINTS - 1) as f64)
        .collect();
    let density = grid
        .iter()
        .map(|&x| samples.iter().map(|&s| (-0.5 * ((x - s) / bw).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: bw,
    })
}

fn column(data: &[f64], m: usize, j: usize) -> Vec<f64> {
    data.iter().skip(j).step_by(m).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDensity {
    pub feature: usize,
    pub truth: KdeCurve,
    pub reconstruction: KdeCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub rmse: Vec<f64>,
    /// Lowest RMSE first.
    pub best: Vec<usize>,
    /// Highest RMSE first.
    pub worst: Vec<usize>,
    pub densities: Vec<FeatureDensity>,
    pub warnings: Vec<String>,
}

/// Per-feature RMSE of `recon` against `truth` (both `N x m`), best and
/// worst three features, and densities for the ranked features.
pub fn feature_report(truth: &[f64], recon: &[f64], m: usize) -> Result<FeatureReport> {
    if m == 0 || truth.len() != recon.len() || truth.len() % m != 0 {
        return Err(Error::Dimension(format!(
            "truth has {} values, reconstruction {}, m = {m}",
            truth.len(),
            recon.len()
        )));
    }
    let n = truth.len() / m;
    if n < 2 {
        return Err(Error::Statistics("feature report needs at least 2 rows".into()));
    }
    let mut rmse = vec![0.0; m];
    for (t, r) in truth.chunks(m).zip(recon.chunks(m)) {
        for j in 0..m {
            rmse[j] += (t[j] - r[j]).powi(2);
        }
    }
    rmse.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| rmse[a].total_cmp(&rmse[b]).then(a.cmp(&b)));
    let mut warnings = Vec::new();
    let k_best = 3.min(m.div_ceil(2));
    let k_worst = 3.min(m - k_best);
    if m < 6 {
        warnings.push(format!("only {m} features; rankings truncated to {k_best} best and {k_worst} worst"));
    }
    let best: Vec<usize> = order[..k_best].to_vec();
    let worst: Vec<usize> = order.iter().rev().take(k_worst).copied().collect();
    let mut densities = Vec::new();
    for &j in best.iter().chain(&worst) {
        densities.push(FeatureDensity {
            feature: j,
            truth: kde(&column(truth, m, j))?,
            reconstruction: kde(&column(recon, m, j))?,
        });
    }
    Ok(FeatureReport {
        rmse,
        best,
        worst,
        densities,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeReport {
    pub synthetic_mean: Vec<f64>,
    pub synthetic_std: Vec<f64>,
    pub test_mean: Vec<f64>,
    pub test_std: Vec<f64>,
    /// `mean_j (|mean_s - mean_t| + |std_s - std_t|)`.
    pub score: f64,
    pub synthetic_density: Vec<KdeCurve>,
    pub test_density: Vec<KdeCurve>,
}

/// Compares feature-wise marginals of synthetic and test outputs.
pub fn compare_marginals(synthetic: &[f64], test: &[f64], m: usize) -> Result<GenerativeReport> {
    if m == 0 || synthetic.len() % m != 0 || test.len() % m != 0 {
        return Err(Error::Dimension(format!("marginal comparison with m = {m}")));
    }
    if synthetic.len() / m < 2 || test.len() / m < 2 {
        return Err(Error::Statistics("marginal comparison needs at least 2 rows on each side".into()));
    }
    let mut rep = GenerativeReport {
        synthetic_mean: Vec::with_capacity(m),
        synthetic_std: Vec::with_capacity(m),
        test_mean: Vec::with_capacity(m),
        test_std: Vec::with_capacity(m),
        score: 0.0,
        synthetic_density: Vec::with_capacity(m),
        test_density: Vec::with_capacity(m),
    };
    for j in 0..m {
        let s = column(synthetic, m, j);
        let t = column(test, m, j);
        let (ms, ss) = mean_std(&s);
        let (mt, st) = mean_std(&t);
        rep.score += (ms - mt).abs() + (ss - st).abs();
        rep.synthetic_mean.push(ms);
        rep.synthetic_std.push(ss);
        rep.test_mean.push(mt);
        rep.test_std.push(st);
        rep.synthetic_density.push(kde(&s)?);
        rep.test_density.push(kde(&t)?);
    }
    rep.score /= m as f64;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCovReport {
    pub r: usize,
    /// Row-major `r x r`.
    pub matrix: Vec<f64>,
    pub off_diagonal_energy: f64,
    pub diagonal_deviation: f64,
}

impl LatentCovReport {
    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r, self.r, &self.matrix)
    }
}

/// Empirical covariance (divisor `N`) of row-major `N x r` codes.
pub fn code_covariance(z: &[f64], r: usize) -> Result<LatentCovReport> {
    if r == 0 || z.len() % r != 0 {
        return Err(Error::Dimension(format!("{} code values for r = {r}", z.len())));
    }
    let n = z.len() / r;
    if n < 2 {
        return Err(Error::Statistics(format!("latent covariance needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; r];
    for row in z.chunks(r) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = DMatrix::zeros(r, r);
    for row in z.chunks(r) {
        for i in 0..r {
            let di = row[i] - mean[i];
            for j in i..r {
                c[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..r {
        for j in i..r {
            c[(i, j)] /= n as f64;
            c[(j, i)] = c[(i, j)];
        }
    }
    let (off, diag) = cov_energy_split(&c);
    Ok(LatentCovReport {
        r,
        matrix: c.transpose().as_slice().to_vec(),
        off_diagonal_energy: off,
        diagonal_deviation: diag,
    })
}

/// Maps latent codes to outputs in eval mode.
pub trait CodeDecoder {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Row-major `batch x r` codes to `batch x m` outputs.
    fn decode_codes(&self, z: &[f64], batch: usize) -> Result<Vec<f64>>;
}

/// Maps data rows to latent means and log-variances in eval mode.
pub trait CodeEncoder {
    fn latent_dim(&self) -> usize;
    fn encode_rows(&self, data: &PreparedData, rows: &[usize]) -> Result<(Vec<f64>, Vec<f64>)>;
}

const EVAL_CHUNK: usize = 250;

impl<T: Real> CodeDecoder for Ved<T> {
    fn latent_dim(&self) -> usize {
        self.arch().latent_dim
    }
    fn output_dim(&self) -> usize {
        self.arch().output_dim
    }
    fn decode_codes(&self, z: &[f64], batch: usize) -> Result<Vec<f64>> {
        let zt: Vec<T> = z.iter().map(|&v| T::of(v)).collect();
        Ok(self.decode_eval(&zt, batch)?.iter().map(|v| v.f64()).collect())
    }
}

impl<T: Real> CodeEncoder for Ved<T> {
    fn latent_dim(&self) -> usize {
        self.arch().latent_dim
    }
    fn encode_rows(&self, data: &PreparedData, rows: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Vec::new();
        let mut h = Vec::new();
        for chunk in rows.chunks(EVAL_CHUNK) {
            let (x, _) = data.batch::<T>(chunk);
            let enc = self.encode_eval(&x)?;
            g.extend(enc.g.iter().map(|v| v.f64()));
            h.extend(enc.h.iter().map(|v| v.f64()));
        }
        Ok((g, h))
    }
}

/// Eval-mode reconstructions of `rows` with fresh noise from the
/// `(seed, "eval-recon", 0)` substream; row-major `N x m`.
pub fn reconstruct<T: Real>(model: &Ved<T>, data: &PreparedData, rows: &[usize], seed: u64) -> Result<Vec<f64>> {
    let mut noise = rng::substream(seed, "eval-recon", 0);
    let mut out = Vec::with_capacity(rows.len() * data.m);
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch::<T>(chunk);
        let f = model.forward_eval(&x, Noise::Sample(&mut noise))?;
        out.extend(f.y_hat.iter().map(|v| v.f64()));
    }
    Ok(out)
}

/// Targets of `rows` as `f64`, row-major.
pub fn targets(data: &PreparedData, rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .flat_map(|&i| data.y_row(i).iter().map(|&v| f64::from(v)))
        .collect()
}

/// Decodes `n_samples` prior draws `z ~ N(0, I_r)` (substream
/// `(seed, "eval-decode", 0)`) and compares marginals with `test_y`.
pub fn decode_noise<D: CodeDecoder + ?Sized>(
    decoder: &D,
    n_samples: usize,
    test_y: &[f64],
    seed: u64,
) -> Result<GenerativeReport> {
    if n_samples < 2 {
        return Err(Error::Config(format!("decode_noise needs n_samples >= 2, got {n_samples}")));
    }
    let r = decoder.latent_dim();
    let m = decoder.output_dim();
    let mut g = rng::substream(seed, "eval-decode", 0);
    let mut synthetic = Vec::with_capacity(n_samples * m);
    let mut left = n_samples;
    while left > 0 {
        let b = left.min(EVAL_CHUNK);
        let z: Vec<f64> = (0..b * r).map(|_| g.sample(StandardNormal)).collect();
        synthetic.extend(decoder.decode_codes(&z, b)?);
        left -= b;
    }
    compare_marginals(&synthetic, test_y, m)
}

/// Samples one code `z = g + eps * exp(h / 2)` per row (substream
/// `(seed, "eval-cov", 0)`) and returns their empirical covariance.
pub fn latent_covariance<E: CodeEncoder + ?Sized>(
    encoder: &E,
    data: &PreparedData,
    rows: &[usize],
    seed: u64,
) -> Result<LatentCovReport> {
    if rows.len() < 2 {
        return Err(Error::Statistics(format!("latent covariance needs at least 2 rows, got {}", rows.len())));
    }
    let r = encoder.latent_dim();
    let (g, h) = encoder.encode_rows(data, rows)?;
    let mut e = rng::substream(seed, "eval-cov", 0);
    let z: Vec<f64> = g
        .iter()
        .zip(&h)
        .map(|(&g, &h)| g + e.sample::<f64, _>(StandardNormal) * (0.5 * h).exp())
        .collect();
    code_covariance(&z, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kde_integrates_to_one() {
        let s: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.731).sin() * 2.0 + 0.1 * i as f64).collect();
        let k = kde(&s).unwrap();
        assert_eq!(k.grid.len(), KDE_POINTS);
        assert!((k.integral() - 1.0).abs() < 1e-3);
        let c = kde(&[2.0, 2.0, 2.0]).unwrap();
        assert!((c.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn identity_reconstruction_has_zero_rmse() {
        let t: Vec<f64> = (0..70).map(|i| (i as f64).cos()).collect();
        let rep = feature_report(&t, &t, 7).unwrap();
        assert!(rep.rmse.iter().all(|&v| v == 0.0));
        assert_eq!(rep.best.len(), 3);
        assert_eq!(rep.worst.len(), 3);
        assert!(rep.best.iter().all(|b| !rep.worst.contains(b)));
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn small_m_truncates_with_warning() {
        let t: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let rep = feature_report(&t, &t, 3).unwrap();
        assert_eq!((rep.best.len(), rep.worst.len()), (2, 1));
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn marginal_score_zero_iff_moments_match() {
        let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(compare_marginals(&a, &a, 4).unwrap().score, 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
        assert!((compare_marginals(&b, &a, 4).unwrap().score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn code_covariance_is_symmetric() {
        let z: Vec<f64> = (0..60).map(|i| ((i * i) as f64 * 0.17).sin()).collect();
        let c = code_covariance(&z, 3).unwrap().as_matrix();
        assert!((c.clone() - c.transpose()).abs().max() < 1e-15);
        assert!((0..3).all(|i| c[(i, i)] >= 0.0));
        assert!(code_covariance(&z[..3], 3).is_err());
    }
}
