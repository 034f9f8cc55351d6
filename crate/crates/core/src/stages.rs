//! The experiment stages behind the command-line subcommands. Each stage
//! takes resolved settings, writes its artifacts into a directory and
//! returns the paths it wrote.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cca;
use crate::config::Config;
use crate::error::Result;
use crate::eval::{self, FeatureReport, GenerativeReport, LatentCovReport};
use crate::exec::Execution;
use crate::field::{build_kle, generate_dataset, Dataset};
use crate::io;
use crate::nn::{Real, Ved};
use crate::plot;
use crate::train::PreparedData;

/// Builds the grid and KLE basis from the config and draws the dataset.
pub fn generate(cfg: &Config, exec: Execution) -> Result<Dataset> {
    let d = &cfg.data;
    let grid = d.build_grid(cfg.seed)?;
    grid.check_well_posed()?;
    let kernel = d.kernel();
    let order = d.kle_order.min(grid.n_active());
    let kle = build_kle(&grid, &kernel, order)?;
    generate_dataset(&grid, &kle, &kernel, d.n_samples, d.n_wells, d.split, cfg.seed, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaSummary {
    pub threshold: f64,
    pub latent_dim: usize,
    pub ridge_eps: f64,
    pub explained_fraction_of_total: f64,
    pub s2: Vec<f64>,
    pub cev_normalized: Vec<f64>,
}

/// CCA on the standardized training rows; writes `cev.csv`, `cev.png`
/// and `cca.json`.
pub fn run_cca(ds: &Dataset, threshold: f64, eps: Option<f64>, dir: &Path) -> Result<(CcaSummary, Vec<PathBuf>)> {
    let rows = ds.n_train;
    let x = DMatrix::from_fn(rows, ds.n_inputs, |i, j| f64::from(ds.x_row(i)[j]));
    let y = DMatrix::from_fn(rows, ds.n_outputs, |i, j| f64::from(ds.y_row(i)[j]));
    let xs = cca::standardize(&x, rows);
    let ys = cca::standardize(&y, rows);
    let eps = match eps {
        Some(e) => e,
        None => cca::default_eps(&xs)?,
    };
    let res = cca::fit_cca(&xs, &ys, eps)?;
    let curve = cca::cev_curve(&res)?;
    let summary = CcaSummary {
        threshold,
        latent_dim: cca::latent_dim_for_threshold(&res, threshold)?,
        ridge_eps: eps,
        explained_fraction_of_total: res.explained_fraction_of_total(),
        s2: res.s2.clone(),
        cev_normalized: curve.clone(),
    };
    io::ensure_dir(dir)?;
    let csv = dir.join("cev.csv");
    let rows: Vec<Vec<String>> = curve
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1).to_string(), format!("{v:.12}")])
        .collect();
    io::write_csv(&csv, &["i", "cev_normalized"], &rows)?;
    let png = dir.join("cev.png");
    let xs_plot: Vec<f64> = (1..=curve.len()).map(|i| i as f64).collect();
    let thr = vec![threshold; curve.len()];
    plot::line_plot(&png, &[(&xs_plot, &curve), (&xs_plot, &thr)], 480, 320)?;
    let json = dir.join("cca.json");
    io::write_json(&json, &summary)?;
    Ok((summary, vec![csv, png, json]))
}

/// Per-feature reconstruction report on the test split; writes
/// `recon_features.csv`, `recon.json` and `recon_densities.png`.
pub fn eval_recon<T: Real>(
    model: &Ved<T>,
    data: &PreparedData,
    seed: u64,
    dir: &Path,
) -> Result<(FeatureReport, Vec<PathBuf>)> {
    let rows: Vec<usize> = data.test.clone().collect();
    let truth = eval::targets(data, &rows);
    let recon = eval::reconstruct(model, data, &rows, seed)?;
    let rep = eval::feature_report(&truth, &recon, data.m)?;
    for w in &rep.warnings {
        log::warn!("{w}");
    }
    io::ensure_dir(dir)?;
    let csv = dir.join("recon_features.csv");
    let rank = |j: usize| {
        if rep.best.contains(&j) {
            "best"
        } else if rep.worst.contains(&j) {
            "worst"
        } else {
            ""
        }
    };
    let lines: Vec<Vec<String>> = rep
        .rmse
        .iter()
        .enumerate()
        .map(|(j, v)| vec![j.to_string(), format!("{v:.9e}"), rank(j).to_string()])
        .collect();
    io::write_csv(&csv, &["feature", "rmse", "rank"], &lines)?;
    let json = dir.join("recon.json");
    io::write_json(&json, &rep)?;
    let png = dir.join("recon_densities.png");
    let series: Vec<(&[f64], &[f64])> = rep
        .densities
        .iter()
        .flat_map(|d| {
            [
                (d.truth.grid.as_slice(), d.truth.density.as_slice()),
                (d.reconstruction.grid.as_slice(), d.reconstruction.density.as_slice()),
            ]
        })
        .collect();
    plot::line_plot(&png, &series, 640, 360)?;
    Ok((rep, vec![csv, json, png]))
}

/// Decoded prior noise against the test marginals; writes
/// `decode_noise.csv`, `decode_noise.json` and `decode_densities.png`.
pub fn eval_decode<T: Real>(
    model: &Ved<T>,
    data: &PreparedData,
    n_samples: Option<usize>,
    seed: u64,
    dir: &Path,
) -> Result<(GenerativeReport, Vec<PathBuf>)> {
    let rows: Vec<usize> = data.test.clone().collect();
    let test_y = eval::targets(data, &rows);
    let n = n_samples.unwrap_or(rows.len());
    let rep = eval::decode_noise(model, n, &test_y, seed)?;
    io::ensure_dir(dir)?;
    let csv = dir.join("decode_noise.csv");
    let lines: Vec<Vec<String>> = (0..rep.test_mean.len())
        .map(|j| {
            vec![
                j.to_string(),
                format!("{:.9e}", rep.synthetic_mean[j]),
                format!("{:.9e}", rep.synthetic_std[j]),
                format!("{:.9e}", rep.test_mean[j]),
                format!("{:.9e}", rep.test_std[j]),
            ]
        })
        .collect();
    io::write_csv(&csv, &["feature", "synthetic_mean", "synthetic_std", "test_mean", "test_std"], &lines)?;
    let json = dir.join("decode_noise.json");
    io::write_json(&json, &rep)?;
    let png = dir.join("decode_densities.png");
    let k = rep.test_density.len().min(3);
    let series: Vec<(&[f64], &[f64])> = (0..k)
        .flat_map(|j| {
            [
                (rep.test_density[j].grid.as_slice(), rep.test_density[j].density.as_slice()),
                (rep.synthetic_density[j].grid.as_slice(), rep.synthetic_density[j].density.as_slice()),
            ]
        })
        .collect();
    plot::line_plot(&png, &series, 640, 360)?;
    Ok((rep, vec![csv, json, png]))
}

/// Empirical code covariance on the test split; writes
/// `latent_cov.csv`, `latent_cov.json` and `latent_cov.png`.
pub fn eval_cov<T: Real>(
    model: &Ved<T>,
    data: &PreparedData,
    seed: u64,
    dir: &Path,
) -> Result<(LatentCovReport, Vec<PathBuf>)> {
    let rows: Vec<usize> = data.test.clone().collect();
    let rep = eval::latent_covariance(model, data, &rows, seed)?;
    io::ensure_dir(dir)?;
    let csv = dir.join("latent_cov.csv");
    let header: Vec<String> = (0..rep.r).map(|j| format!("z{j}")).collect();
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let lines: Vec<Vec<String>> = rep
        .matrix
        .chunks(rep.r)
        .map(|row| row.iter().map(|v| format!("{v:.9e}")).collect())
        .collect();
    io::write_csv(&csv, &header_ref, &lines)?;
    let json = dir.join("latent_cov.json");
    io::write_json(&json, &rep)?;
    let png = dir.join("latent_cov.png");
    let cell = (384 / rep.r.max(1)).clamp(2, 32) as u32;
    plot::heatmap(&png, &rep.matrix, rep.r, rep.r, cell)?;
    Ok((rep, vec![csv, json, png]))
}
