//! Single TOML file driving every stage. All sections are optional and
//! fall back to the desk-scale defaults.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! height = 24
//! width = 18
//! n_samples = 4000
//! n_wells = 30
//!
//! [model]
//! latent_dim = 32
//!
//! [train]
//! epochs = 40
//!
//! [sweep]
//! r_list = [8, 16, 32]
//! beta_list = [0.0, 0.01]
//! lambda_list = [0.0]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{BoundarySpec, CovarianceKernel, FlowGrid, SplitFractions};
use crate::nn::ArchConfig;
use crate::train::{SweepGrid, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
    /// Largest corner bite as a fraction of each side; 0 keeps the
    /// full rectangle.
    pub bite_fraction: f64,
    /// When set, a lens-shaped region with exactly this many active cells
    /// replaces the corner-bite mask.
    pub active_cells: Option<usize>,
    pub n_samples: usize,
    pub n_wells: usize,
    pub split: SplitFractions,
    pub kernel_variance: f64,
    /// Defaults to `0.2 * width * cell_size`.
    pub length_scale: Option<f64>,
    pub kle_order: usize,
    pub bc: BoundarySpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            height: 24,
            width: 18,
            cell_size: 1.0,
            bite_fraction: 0.2,
            active_cells: None,
            n_samples: 4000,
            n_wells: 30,
            split: SplitFractions::default(),
            kernel_variance: 1.0,
            length_scale: None,
            kle_order: 200,
            bc: BoundarySpec::default(),
        }
    }
}

impl DataConfig {
    /// Full-size record: a 69x54 image holding 1475 active cells, 1000
    /// KLE modes, 323 wells and 20000 samples.
    pub fn full_scale() -> Self {
        Self {
            height: 69,
            width: 54,
            active_cells: Some(1475),
            n_samples: 20_000,
            n_wells: 323,
            kle_order: 1000,
            ..Self::default()
        }
    }

    pub fn kernel(&self) -> CovarianceKernel {
        CovarianceKernel {
            variance: self.kernel_variance,
            length_scale: self
                .length_scale
                .unwrap_or(0.2 * self.width as f64 * self.cell_size),
        }
    }

    pub fn build_grid(&self, seed: u64) -> Result<FlowGrid> {
        if let Some(n) = self.active_cells {
            FlowGrid::with_active_count(self.height, self.width, self.cell_size, n, self.bc)
        } else if self.bite_fraction > 0.0 {
            FlowGrid::with_corner_bites(self.height, self.width, self.cell_size, self.bite_fraction, seed, self.bc)
        } else {
            FlowGrid::rectangle(self.height, self.width, self.cell_size, self.bc)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcaConfig {
    pub threshold: f64,
    /// Ridge on the input covariance; a trace-scaled default when unset.
    pub eps: Option<f64>,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self {
            threshold: 0.95,
            eps: None,
        }
    }
}

/// Architecture settings that do not depend on the data shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub channel_schedule: Vec<usize>,
    pub n_res_blocks: usize,
    pub decoder_hidden: usize,
    pub h_clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            channel_schedule: vec![1, 16, 32, 64, 128, 256],
            n_res_blocks: 4,
            decoder_hidden: 512,
            h_clamp: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, height: usize, width: usize, m: usize) -> ArchConfig {
        ArchConfig {
            input_h: height,
            input_w: width,
            latent_dim: self.latent_dim,
            channel_schedule: self.channel_schedule.clone(),
            n_res_blocks: self.n_res_blocks,
            decoder_hidden: self.decoder_hidden,
            output_dim: m,
            h_clamp: self.h_clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Prior draws for the decoded-noise check; the test split size when
    /// unset.
    pub decode_samples: Option<usize>,
    /// Cells of the sweep to evaluate in the pipeline, as `(r, beta,
    /// lambda)`; the per-r best cells when empty.
    pub cells: Vec<(usize, f64, f64)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            decode_samples: None,
            cells: Vec::new(),
        }
    }
}

fn default_sweep() -> SweepGrid {
    SweepGrid {
        r_list: vec![8, 16, 32],
        beta_list: vec![0.0, 0.01, 0.1],
        lambda_list: vec![0.0, 0.01, 0.1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub cca: CcaConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            cca: CcaConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
            sweep: default_sweep(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.height == 0 || d.width == 0 || !(d.cell_size > 0.0) {
            return Err(Error::Config("data grid must be non-empty with positive cell size".into()));
        }
        if d.n_samples == 0 || d.n_wells == 0 || d.kle_order == 0 {
            return Err(Error::Config("n_samples, n_wells and kle_order must be positive".into()));
        }
        if !(self.cca.threshold > 0.0 && self.cca.threshold <= 1.0) {
            return Err(Error::Config(format!("cca threshold must lie in (0, 1], got {}", self.cca.threshold)));
        }
        self.model.arch(d.height, d.width, d.n_wells).validate()?;
        self.train.validate()?;
        self.sweep.validate()
    }

    /// Seed used by the training stage: `train.seed` wins when set to a
    /// non-zero value, otherwise the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: if self.train.seed != 0 { self.train.seed } else { self.seed },
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c, Config::default());
        assert!((c.data.kernel().length_scale - 3.6).abs() < 1e-12);
    }

    #[test]
    fn round_trip_and_unknown_keys() {
        let c = Config::default();
        let s = c.to_toml_string().unwrap();
        assert_eq!(Config::from_toml_str(&s).unwrap(), c);
        assert!(matches!(Config::from_toml_str("[data]\nhieght = 3"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml_str("[train]\nepochs = 0"), Err(Error::Config(_))));
    }

    #[test]
    fn partial_sections() {
        let c = Config::from_toml_str("seed = 3\n[model]\nlatent_dim = 8\n[train]\nbeta_schedule = { kind = \"linear\", start = 0.0, end = 0.1 }").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.latent_dim, 8);
        assert_eq!(c.model.decoder_hidden, 512);
        assert_eq!(c.train_config().seed, 3);
    }

    #[test]
    fn full_scale_record() {
        let d = DataConfig::full_scale();
        let grid = d.build_grid(0).unwrap();
        assert_eq!(grid.n_active(), 1475);
        grid.check_well_posed().unwrap();
        assert_eq!((d.kle_order, d.n_wells, d.n_samples), (1000, 323, 20_000));
        assert!(grid.n_active() - grid.dirichlet_cells().len() >= d.n_wells);
        let arch = ModelConfig::default().arch(d.height, d.width, d.n_wells);
        assert_eq!(arch, ArchConfig::full_scale(32));
    }
}
