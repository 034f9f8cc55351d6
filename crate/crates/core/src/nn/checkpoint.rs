//! Model checkpoints: a JSON manifest plus little-endian `f32` weights.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArchConfig, Ved};
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::io;

const MANIFEST: &str = "checkpoint.json";
const WEIGHTS: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub epoch: usize,
    pub step: usize,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    meta: CheckpointMeta,
    weights_file: String,
    tensors: Vec<TensorEntry>,
}

/// Writes `checkpoint.json` and `weights.bin` into `dir`.
pub fn save_checkpoint<T: Real>(model: &Ved<T>, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    io::ensure_dir(dir)?;
    let mut flat = Vec::new();
    let mut tensors = Vec::new();
    for p in model.params() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            kind: "param".into(),
            shape: p.shape.clone(),
            offset: flat.len(),
            len: p.value.len(),
        });
        flat.extend(p.value.iter().map(|v| v.f64() as f32));
    }
    for b in model.buffers() {
        tensors.push(TensorEntry {
            name: b.name.clone(),
            kind: "buffer".into(),
            shape: vec![b.value.len()],
            offset: flat.len(),
            len: b.value.len(),
        });
        flat.extend(b.value.iter().map(|v| v.f64() as f32));
    }
    io::write_f32le(&dir.join(WEIGHTS), &flat)?;
    io::write_json(
        &dir.join(MANIFEST),
        &Manifest {
            format_version: 1,
            dtype: "f32le".into(),
            meta: meta.clone(),
            weights_file: WEIGHTS.into(),
            tensors,
        },
    )
}

/// Rebuilds the model described by the manifest and loads every tensor by
/// name. Missing or mis-shaped tensors are format errors.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(Ved<T>, CheckpointMeta)> {
    let mpath = dir.join(MANIFEST);
    let manifest: Manifest = io::read_json(&mpath)?;
    if manifest.dtype != "f32le" {
        return Err(Error::format(&mpath, format!("unsupported dtype {}", manifest.dtype)));
    }
    let total = manifest.tensors.iter().map(|t| t.offset + t.len).max().unwrap_or(0);
    let flat = io::read_f32le(&dir.join(&manifest.weights_file), total)?;
    let mut model: Ved<T> = Ved::new(manifest.meta.arch.clone(), 0)?;
    let by_name: BTreeMap<&str, &TensorEntry> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let fetch = |name: &str, len: usize| -> Result<&[f32]> {
        let e = by_name
            .get(name)
            .ok_or_else(|| Error::format(&mpath, format!("missing tensor {name}")))?;
        if e.len != len {
            return Err(Error::format(&mpath, format!("tensor {name}: expected {len} values, found {}", e.len)));
        }
        Ok(&flat[e.offset..e.offset + e.len])
    };
    for p in model.params_mut() {
        let src = fetch(&p.name, p.value.len())?;
        p.value.iter_mut().zip(src).for_each(|(d, s)| *d = T::of(f64::from(*s)));
    }
    for b in model.buffers_mut() {
        let src = fetch(&b.name, b.value.len())?;
        b.value.iter_mut().zip(src).for_each(|(d, s)| *d = T::of(f64::from(*s)));
    }
    Ok((model, manifest.meta))
}
