//! Self-describing record written next to every CLI run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::Result;
use crate::io;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub toolkit_version: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub completed_stages: Vec<String>,
}

/// Accumulates artifacts while a command runs.
pub struct RunRecorder {
    manifest: RunManifest,
    start: Instant,
}

impl RunRecorder {
    pub fn new(command: &str, config: &Config) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut seeds = BTreeMap::new();
        seeds.insert("root".to_string(), config.seed);
        seeds.insert("train".to_string(), config.train_config().seed);
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                config: config.clone(),
                seeds,
                artifacts: Vec::new(),
                started_unix,
                wall_clock_secs: 0.0,
                toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                status: "running".into(),
                completed_stages: Vec::new(),
            },
            start: Instant::now(),
        }
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        let p = path.into();
        if !self.manifest.artifacts.contains(&p) {
            self.manifest.artifacts.push(p);
        }
    }

    pub fn stage_done(&mut self, stage: &str) {
        self.manifest.completed_stages.push(stage.to_string());
    }

    /// Writes the manifest into `dir` with the given status.
    pub fn finish(mut self, dir: &Path, status: &str) -> Result<RunManifest> {
        self.manifest.wall_clock_secs = self.start.elapsed().as_secs_f64();
        self.manifest.status = status.to_string();
        let path = dir.join(MANIFEST_FILE);
        self.manifest.artifacts.push(path.clone());
        io::ensure_dir(dir)?;
        io::write_json(&path, &self.manifest)?;
        Ok(self.manifest)
    }
}
