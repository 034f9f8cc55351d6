//! Mini-batch training with Adam, cosine decay, clipping, per-epoch test
//! evaluation and best-checkpoint retention; plus grid sweeps.

mod data;
pub mod optim;
pub mod schedule;
mod sweep;

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use data::PreparedData;
pub use optim::{clip_grad_norm, cosine_lr, global_grad_norm, Adam};
pub use schedule::{schedule_value, Schedule};
pub use sweep::{sweep, SweepGrid, SweepRow};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::nn::{save_checkpoint, ArchConfig, CheckpointMeta, Noise, Real, Ved};
use crate::{io, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub clip_norm: f64,
    pub beta_schedule: Schedule,
    pub lambda_schedule: Schedule,
    pub seed: u64,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    /// Batch size for evaluation passes; affects speed only.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 100,
            lr_init: 1e-3,
            lr_final: 1e-5,
            clip_norm: 1.0,
            beta_schedule: Schedule::constant(0.01),
            lambda_schedule: Schedule::constant(0.01),
            seed: 0,
            train_size: None,
            test_size: None,
            eval_batch_size: 250,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.eval_batch_size == 0 {
            return bad("eval_batch_size must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_final >= 0.0 && self.lr_final <= self.lr_init) {
            return bad(format!("need 0 <= lr_final <= lr_init, lr_init > 0; got {} / {}", self.lr_init, self.lr_final));
        }
        self.beta_schedule.validate()?;
        self.lambda_schedule.validate()
    }

    pub fn weights_at(&self, epoch: usize) -> Result<LossWeights> {
        LossWeights::new(
            self.beta_schedule.value(epoch, self.epochs)?,
            self.lambda_schedule.value(epoch, self.epochs)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr_last: f64,
    pub train: LossBreakdown,
    pub test: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Minimum test MSE (reporting convention) over epochs.
    pub best_mse: f64,
    /// Test KLD (reporting convention) at the best epoch.
    pub best_kld: f64,
    pub checkpoint: Option<PathBuf>,
    /// Global gradient norm after clipping, one entry per optimizer step.
    pub post_clip_grad_norms: Vec<f64>,
    pub initial_train_total: f64,
}

pub struct TrainOutcome {
    pub record: MetricsRecord,
    pub best_model: Ved<f32>,
}

pub const METRICS_HEADER: [&str; 8] = ["epoch", "split", "mse_report", "kld_report", "cov", "total", "beta", "lambda"];

fn metrics_row(epoch: usize, split: &str, l: &LossBreakdown) -> Vec<String> {
    vec![
        epoch.to_string(),
        split.to_string(),
        format!("{:.9e}", l.mse_report),
        format!("{:.9e}", l.kld_report),
        format!("{:.9e}", l.cov),
        format!("{:.9e}", l.total),
        l.beta.to_string(),
        l.lambda.to_string(),
    ]
}

/// Eval-mode loss over `rows`, in batches of `batch_size`, with noise
/// from the `(seed, "eval", 0)` substream. MSE and KLD are row means;
/// the covariance term uses the aggregate over all rows.
pub fn evaluate<T: Real>(
    model: &Ved<T>,
    data: &PreparedData,
    rows: Range<usize>,
    w: LossWeights,
    seed: u64,
    batch_size: usize,
) -> Result<LossBreakdown> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Statistics(format!("evaluation needs at least 2 rows, got {n}")));
    }
    let r = model.arch().latent_dim;
    let m = data.m;
    let mut noise = rng::substream(seed, "eval", 0);
    let idx: Vec<usize> = rows.collect();
    let (mut mse_sum, mut kld_sum) = (0.0, 0.0);
    let mut g_all = Vec::with_capacity(n * r);
    let mut h_all = Vec::with_capacity(n * r);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch::<T>(chunk);
        let out = model.forward_eval(&x, Noise::Sample(&mut noise))?;
        let b = chunk.len();
        mse_sum += losses::mse_loss(&y, &out.y_hat, b, m)? * b as f64;
        kld_sum += losses::kld_loss(&out.enc.g, &out.enc.h, b, r)? * b as f64;
        g_all.extend_from_slice(&out.enc.g);
        h_all.extend_from_slice(&out.enc.h);
    }
    let cov = losses::cov_penalty(&losses::aggregate_cov(&g_all, &h_all, n, r)?.matrix);
    Ok(LossBreakdown::assemble(mse_sum / n as f64, kld_sum / n as f64, cov, w, m, r))
}

/// Trains a fresh model. With `out_dir`, writes `metrics.csv` and keeps
/// the best-test-MSE checkpoint in `out_dir/best`.
pub fn train(
    data: &PreparedData,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if arch.input_h != data.height || arch.input_w != data.width || arch.output_dim != data.m {
        return Err(Error::Dimension(format!(
            "architecture expects {}x{} -> {}, data is {}x{} -> {}",
            arch.input_h, arch.input_w, arch.output_dim, data.height, data.width, data.m
        )));
    }
    if data.train.len() < cfg.batch_size.min(2) || data.train.len() < 2 {
        return Err(Error::Config("training split is too small".into()));
    }
    let mut model: Ved<f32> = Ved::new(arch.clone(), cfg.seed)?;
    model.set_execution(exec);
    let mut opt = Adam::new(&model.params_mut());

    let n_train = data.train.len();
    let full = n_train / cfg.batch_size;
    let rem = n_train % cfg.batch_size;
    let steps_per_epoch = full + usize::from(rem >= 2);
    let total_steps = steps_per_epoch * cfg.epochs;

    let metrics_path = out_dir.map(|d| d.join("metrics.csv"));
    let ckpt_dir = out_dir.map(|d| d.join("best"));
    if let Some(d) = out_dir {
        io::ensure_dir(d)?;
        io::write_csv(metrics_path.as_ref().unwrap(), &METRICS_HEADER, &[])?;
    }

    let w0 = cfg.weights_at(0)?;
    let initial_train_total = evaluate(&model, data, data.train.clone(), w0, cfg.seed, cfg.eval_batch_size)?.total;

    let mut record = MetricsRecord {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_mse: f64::INFINITY,
        best_kld: f64::NAN,
        checkpoint: None,
        post_clip_grad_norms: Vec::with_capacity(total_steps),
        initial_train_total,
    };
    let mut best_model = model.clone();
    let mut order: Vec<usize> = data.train.clone().collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let w = cfg.weights_at(epoch)?;
        order.sort_unstable();
        order.shuffle(&mut rng::substream(cfg.seed, "shuffle", epoch as u64));
        let mut noise = rng::substream(cfg.seed, "noise", epoch as u64);
        let mut sums = [0.0f64; 3];
        let mut seen = 0usize;
        let mut lr = cfg.lr_init;
        for batch_rows in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let (x, y) = data.batch::<f32>(batch_rows);
            model.zero_grad();
            let loss = losses::total_loss_and_backward(&mut model, &x, &y, w, Noise::Sample(&mut noise))
                .map_err(|e| diverged(epoch, step, e))?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("non-finite loss {}", loss.total),
                });
            }
            lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_final);
            let mut params = model.params_mut();
            let (pre, post) = clip_grad_norm(&mut params, cfg.clip_norm);
            if !pre.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: "non-finite gradient".into(),
                });
            }
            record.post_clip_grad_norms.push(post);
            opt.step(&mut params, lr);
            let b = batch_rows.len() as f64;
            sums[0] += loss.mse * b;
            sums[1] += loss.kld * b;
            sums[2] += loss.cov * b;
            seen += batch_rows.len();
            step += 1;
        }
        let seen = seen as f64;
        let train_l = LossBreakdown::assemble(sums[0] / seen, sums[1] / seen, sums[2] / seen, w, data.m, arch.latent_dim);
        let test_l = evaluate(&model, data, data.test.clone(), w, cfg.seed, cfg.eval_batch_size)
            .map_err(|e| diverged(epoch, step, e))?;
        log::info!(
            "epoch {epoch}: train total {:.4e}, test mse {:.4e}, test kld {:.4e}",
            train_l.total,
            test_l.mse_report,
            test_l.kld_report
        );
        if let Some(p) = &metrics_path {
            io::append_csv(
                p,
                &METRICS_HEADER,
                &[metrics_row(epoch, "train", &train_l), metrics_row(epoch, "test", &test_l)],
            )?;
        }
        if test_l.mse_report < record.best_mse {
            record.best_mse = test_l.mse_report;
            record.best_kld = test_l.kld_report;
            record.best_epoch = epoch;
            best_model = model.clone();
            if let Some(dir) = &ckpt_dir {
                let mut metrics = BTreeMap::new();
                metrics.insert("test_mse_report".to_string(), test_l.mse_report);
                metrics.insert("test_kld_report".to_string(), test_l.kld_report);
                metrics.insert("test_cov".to_string(), test_l.cov);
                let meta = CheckpointMeta {
                    arch: arch.clone(),
                    epoch,
                    step,
                    metrics,
                };
                save_checkpoint(&model, &meta, dir)?;
                record.checkpoint = Some(dir.clone());
            }
        }
        record.epochs.push(EpochMetrics {
            epoch,
            lr_last: lr,
            train: train_l,
            test: test_l,
        });
    }
    if let Some(d) = out_dir {
        io::write_json(&d.join("record.json"), &record)?;
    }
    Ok(TrainOutcome { record, best_model })
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::Numerical { layer, detail } => Error::Diverged {
            epoch,
            step,
            detail: format!("{layer}: {detail}"),
        },
        other => other,
    }
}
