//! Paired (log-transmissivity, well-head) datasets and their on-disk format.
//!
//! A dataset directory holds `manifest.json`, `X.bin` and `Y.bin`
//! (little-endian `f32`, row-major, one sample per row) and `mask.bin`
//! (one byte per grid cell, row-major `H x W`). Training rows come first,
//! followed by test rows.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::flow::solve_flow;
use super::grid::{BoundarySpec, FlowGrid};
use super::kle::{CovarianceKernel, KleBasis};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::io;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.75, test: 0.25 }
    }
}

impl SplitFractions {
    /// Row counts `(train, test)` for `n` samples.
    pub fn counts(&self, n: usize) -> Result<(usize, usize)> {
        if self.train <= 0.0 || self.test < 0.0 || self.train + self.test > 1.0 + 1e-12 {
            return Err(Error::Config(format!("invalid split fractions {self:?}")));
        }
        let n_train = ((self.train * n as f64).round() as usize).clamp(1, n);
        let n_test = ((self.test * n as f64).round() as usize).min(n - n_train);
        Ok((n_train, n_test))
    }
}

/// Per-feature location and scale, computed on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
}

/// Column mean and population standard deviation of the first `rows` rows.
/// Zero spreads are replaced by 1 so normalization stays finite.
pub fn column_stats(data: &[f32], cols: usize, rows: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (m, v) in mean.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *m += f64::from(*v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for ((s, v), m) in var.iter_mut().zip(&data[r * cols..(r + 1) * cols]).zip(&mean) {
            let d = f64::from(*v) - m;
            *s += d * d;
        }
    }
    let std = var
        .iter()
        .map(|s| {
            let sd = (s / rows as f64).sqrt();
            if sd > 0.0 { sd } else { 1.0 }
        })
        .collect();
    (mean, std)
}

/// Generation settings recorded alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub cell_size: f64,
    pub bc: BoundarySpec,
    pub kernel: CovarianceKernel,
    pub kle_order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// `N x n` log-transmissivities.
    pub x: Vec<f32>,
    /// `N x m` well heads.
    pub y: Vec<f32>,
    pub well_indices: Vec<usize>,
    pub seed: u64,
    pub norm_stats: NormStats,
    pub info: GenerationInfo,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    x_shape: [usize; 2],
    y_shape: [usize; 2],
    grid_shape: [usize; 2],
    n_train: usize,
    n_test: usize,
    seed: u64,
    generation: GenerationInfo,
    well_indices: Vec<usize>,
    norm_stats: NormStats,
    files: ManifestFiles,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFiles {
    x: String,
    y: String,
    mask: String,
}

/// Draws `n_samples` fields, solves flow for each and records heads at
/// `n_wells` wells chosen once from the non-Dirichlet active cells.
/// Sample `i` uses the `(seed, "datagen", i)` substream, so output does not
/// depend on the execution policy.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    grid: &FlowGrid,
    kle: &KleBasis,
    kernel: &CovarianceKernel,
    n_samples: usize,
    n_wells: usize,
    split: SplitFractions,
    seed: u64,
    exec: Execution,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if kle.n() != grid.n_active() {
        return Err(Error::Dimension(format!(
            "KLE basis has {} cells, grid has {}",
            kle.n(),
            grid.n_active()
        )));
    }
    let (n_train, n_test) = split.counts(n_samples)?;
    let candidates: Vec<usize> = (0..grid.n_active())
        .filter(|&c| !grid.is_dirichlet_cell(c))
        .collect();
    if n_wells == 0 || n_wells > candidates.len() {
        return Err(Error::Config(format!(
            "requested {n_wells} wells but only {} non-Dirichlet cells are available",
            candidates.len()
        )));
    }
    let mut well_rng = rng::substream(seed, "wells", 0);
    let mut well_indices: Vec<usize> = index::sample(&mut well_rng, candidates.len(), n_wells)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    well_indices.sort_unstable();

    let samples: Vec<Result<(Vec<f64>, Vec<f64>)>> = exec::map_indexed(exec, n_samples, |i| {
        let mut r = rng::substream(seed, "datagen", i as u64);
        let log_t = kle.sample(&mut r);
        let heads = solve_flow(grid, &log_t)?;
        let y = well_indices.iter().map(|&w| heads[w]).collect();
        Ok((log_t, y))
    });

    let n = grid.n_active();
    let mut x = Vec::with_capacity(n_samples * n);
    let mut y = Vec::with_capacity(n_samples * n_wells);
    for s in samples {
        let (xi, yi) = s?;
        x.extend(xi.iter().map(|&v| v as f32));
        y.extend(yi.iter().map(|&v| v as f32));
    }
    let (x_mean, x_std) = column_stats(&x, n, n_train);
    let (y_mean, y_std) = column_stats(&y, n_wells, n_train);

    Ok(Dataset {
        height: grid.height(),
        width: grid.width(),
        mask: grid.active_mask().to_vec(),
        n_inputs: n,
        n_outputs: n_wells,
        n_train,
        n_test,
        x,
        y,
        well_indices,
        seed,
        norm_stats: NormStats { y_mean, y_std, x_mean, x_std },
        info: GenerationInfo {
            cell_size: grid.cell_size(),
            bc: *grid.bc(),
            kernel: *kernel,
            kle_order: kle.order(),
        },
    })
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.x.len() / self.n_inputs
    }

    pub fn x_row(&self, i: usize) -> &[f32] {
        &self.x[i * self.n_inputs..(i + 1) * self.n_inputs]
    }

    pub fn y_row(&self, i: usize) -> &[f32] {
        &self.y[i * self.n_outputs..(i + 1) * self.n_outputs]
    }

    pub fn train_rows(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    pub fn test_rows(&self) -> std::ops::Range<usize> {
        self.n_train..self.n_train + self.n_test
    }

    /// Standardized input row (training mean/std).
    pub fn x_normalized(&self, i: usize) -> Vec<f64> {
        let s = &self.norm_stats;
        self.x_row(i)
            .iter()
            .zip(s.x_mean.iter().zip(&s.x_std))
            .map(|(&v, (m, sd))| (f64::from(v) - m) / sd)
            .collect()
    }

    /// Standardized output row (training mean/std).
    pub fn y_normalized(&self, i: usize) -> Vec<f64> {
        let s = &self.norm_stats;
        self.y_row(i)
            .iter()
            .zip(s.y_mean.iter().zip(&s.y_std))
            .map(|(&v, (m, sd))| (f64::from(v) - m) / sd)
            .collect()
    }

    /// Rebuilds the flow grid the data were generated on.
    pub fn grid(&self) -> Result<FlowGrid> {
        FlowGrid::with_mask(
            self.height,
            self.width,
            self.info.cell_size,
            self.mask.clone(),
            self.info.bc,
        )
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        let manifest = Manifest {
            format_version: 1,
            dtype: "f32le".into(),
            x_shape: [self.n_samples(), self.n_inputs],
            y_shape: [self.n_samples(), self.n_outputs],
            grid_shape: [self.height, self.width],
            n_train: self.n_train,
            n_test: self.n_test,
            seed: self.seed,
            generation: self.info.clone(),
            well_indices: self.well_indices.clone(),
            norm_stats: self.norm_stats.clone(),
            files: ManifestFiles {
                x: "X.bin".into(),
                y: "Y.bin".into(),
                mask: "mask.bin".into(),
            },
        };
        io::write_json(&dir.join("manifest.json"), &manifest)?;
        io::write_f32le(&dir.join("X.bin"), &self.x)?;
        io::write_f32le(&dir.join("Y.bin"), &self.y)?;
        let mask: Vec<u8> = self.mask.iter().map(|&b| u8::from(b)).collect();
        let p = dir.join("mask.bin");
        std::fs::write(&p, mask).map_err(|e| Error::io(&p, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let m: Manifest = io::read_json(&mpath)?;
        if m.dtype != "f32le" {
            return Err(Error::format(&mpath, format!("unsupported dtype {}", m.dtype)));
        }
        if m.x_shape[0] != m.y_shape[0] {
            return Err(Error::format(&mpath, "X and Y row counts differ"));
        }
        let x = io::read_f32le(&dir.join(&m.files.x), m.x_shape[0] * m.x_shape[1])?;
        let y = io::read_f32le(&dir.join(&m.files.y), m.y_shape[0] * m.y_shape[1])?;
        let mpath_mask = dir.join(&m.files.mask);
        let mask_bytes = std::fs::read(&mpath_mask).map_err(|e| Error::io(&mpath_mask, e))?;
        let [h, w] = m.grid_shape;
        if mask_bytes.len() != h * w {
            return Err(Error::format(&mpath_mask, format!("expected {} bytes", h * w)));
        }
        let mask: Vec<bool> = mask_bytes.iter().map(|&b| b != 0).collect();
        if mask.iter().filter(|&&b| b).count() != m.x_shape[1] {
            return Err(Error::format(&mpath_mask, "active cell count differs from X width"));
        }
        if m.well_indices.len() != m.y_shape[1] || m.well_indices.iter().any(|&w| w >= m.x_shape[1]) {
            return Err(Error::format(&mpath, "well indices inconsistent with shapes"));
        }
        Ok(Self {
            height: h,
            width: w,
            mask,
            n_inputs: m.x_shape[1],
            n_outputs: m.y_shape[1],
            n_train: m.n_train,
            n_test: m.n_test,
            x,
            y,
            well_indices: m.well_indices,
            seed: m.seed,
            norm_stats: m.norm_stats,
            info: m.generation,
        })
    }
}
