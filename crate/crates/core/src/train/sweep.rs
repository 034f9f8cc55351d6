//! Full-factorial sweeps over `(r, beta, lambda)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, PreparedData, Schedule, TrainConfig};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::nn::ArchConfig;
use crate::{io, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub r_list: Vec<usize>,
    pub beta_list: Vec<f64>,
    pub lambda_list: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.r_list.is_empty() || self.beta_list.is_empty() || self.lambda_list.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        Ok(())
    }

    /// Cells in `r`-major order.
    pub fn cells(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &r in &self.r_list {
            for &b in &self.beta_list {
                for &l in &self.lambda_list {
                    out.push((r, b, l));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: usize,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_mse: Option<f64>,
    pub best_kld: Option<f64>,
    /// Lowest best MSE among the cells sharing this `r`.
    pub best_for_r: bool,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: [&str; 9] = [
    "r", "beta", "lambda", "seed", "best_epoch", "best_mse", "best_kld", "best_for_r", "status",
];

/// Trains every cell with seed `derive_seed(cfg.seed, "cell", index)`.
/// Cells run in parallel under [`Execution::Parallel`]; a failing cell is
/// recorded and the sweep continues.
pub fn sweep(
    data: &PreparedData,
    arch_base: &ArchConfig,
    cfg_base: &TrainConfig,
    grid: &SweepGrid,
    out_dir: Option<&Path>,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    cfg_base.validate()?;
    let cells = grid.cells();
    let mut rows: Vec<SweepRow> = exec::map_indexed(exec, cells.len(), |i| {
        let (r, beta, lambda) = cells[i];
        let seed = rng::derive_seed(cfg_base.seed, "cell", i as u64);
        let arch = ArchConfig {
            latent_dim: r,
            ..arch_base.clone()
        };
        let cfg = TrainConfig {
            seed,
            beta_schedule: Schedule::constant(beta),
            lambda_schedule: Schedule::constant(lambda),
            ..cfg_base.clone()
        };
        let dir = out_dir.map(|d| d.join(format!("cell{i:03}_r{r}_b{beta}_l{lambda}")));
        // cells already fill the pool, so each run stays sequential inside
        let inner = if exec.is_parallel() && cells.len() > 1 {
            Execution::Sequential
        } else {
            exec
        };
        let res = train(data, &arch, &cfg, dir.as_deref(), inner);
        let mut row = SweepRow {
            r,
            beta,
            lambda,
            seed,
            best_epoch: None,
            best_mse: None,
            best_kld: None,
            best_for_r: false,
            error: None,
        };
        match res {
            Ok(o) => {
                row.best_epoch = Some(o.record.best_epoch);
                row.best_mse = Some(o.record.best_mse);
                row.best_kld = Some(o.record.best_kld);
            }
            Err(e) => {
                log::warn!("sweep cell {i} (r={r}, beta={beta}, lambda={lambda}) failed: {e}");
                row.error = Some(e.to_string());
            }
        }
        row
    });
    mark_best_per_r(&mut rows);
    if let Some(d) = out_dir {
        io::ensure_dir(d)?;
        io::write_csv(&d.join("sweep.csv"), &SWEEP_HEADER, &rows.iter().map(csv_row).collect::<Vec<_>>())?;
    }
    Ok(rows)
}

fn mark_best_per_r(rows: &mut [SweepRow]) {
    let mut rs: Vec<usize> = rows.iter().map(|r| r.r).collect();
    rs.dedup();
    for r in rs {
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, x)| x.r == r)
            .filter_map(|(i, x)| x.best_mse.map(|m| (i, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = best {
            rows[i].best_for_r = true;
        }
    }
}

fn csv_row(r: &SweepRow) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    vec![
        r.r.to_string(),
        r.beta.to_string(),
        r.lambda.to_string(),
        r.seed.to_string(),
        r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
        opt(r.best_mse),
        opt(r.best_kld),
        r.best_for_r.to_string(),
        r.error.clone().map(|e| format!("error: {e}")).unwrap_or_else(|| "ok".into()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_size_and_order() {
        let g = SweepGrid {
            r_list: vec![50, 100, 150, 200],
            beta_list: vec![0.0, 0.01, 0.1],
            lambda_list: vec![0.0, 0.01, 0.1],
        };
        let c = g.cells();
        assert_eq!(c.len(), 36);
        assert_eq!(c[0], (50, 0.0, 0.0));
        assert_eq!(c[35], (200, 0.1, 0.1));
    }

    #[test]
    fn best_flag_per_r() {
        let mk = |r, m: Option<f64>| SweepRow {
            r,
            beta: 0.0,
            lambda: 0.0,
            seed: 0,
            best_epoch: None,
            best_mse: m,
            best_kld: None,
            best_for_r: false,
            error: None,
        };
        let mut rows = vec![mk(8, Some(0.3)), mk(8, Some(0.2)), mk(16, None), mk(16, Some(0.5))];
        mark_best_per_r(&mut rows);
        let flags: Vec<bool> = rows.iter().map(|r| r.best_for_r).collect();
        assert_eq!(flags, vec![false, true, false, true]);
    }
}
