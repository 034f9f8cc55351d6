use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ved_surrogate::config::Config;
use ved_surrogate::exec::{self, Execution};
use ved_surrogate::field::Dataset;
use ved_surrogate::manifest::RunRecorder;
use ved_surrogate::nn::{load_checkpoint, Ved};
use ved_surrogate::train::{self, PreparedData, Schedule, SweepGrid};
use ved_surrogate::{stages, Error, Result};

#[derive(Parser)]
#[command(name = "ved", version, about = "Variational encoder-decoder surrogates for groundwater flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "train-size")]
    train_size: Option<usize>,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Dataset directory; `<out>/dataset` when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CkptArg {
    /// Checkpoint directory; `<out>/train/best` when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw fields, solve flow and write a dataset directory.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Canonical correlation analysis and the latent-dimension estimate.
    Cca {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
        #[command(flatten)]
        data: DataArg,
    },
    /// Train every (r, beta, lambda) cell of the configured grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
        #[command(flatten)]
        data: DataArg,
    },
    /// Per-feature reconstruction quality on the test split.
    EvalRecon {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        ckpt: CkptArg,
    },
    /// Decode prior draws and compare with the test marginals.
    EvalDecode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        ckpt: CkptArg,
        /// Number of prior draws; the test split size when omitted.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Empirical covariance of sampled latent codes.
    EvalCov {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        ckpt: CkptArg,
    },
    /// generate -> cca -> sweep -> eval.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
    },
}

fn load_config(common: &Common, over: &Overrides) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::Config(format!("config file not found: {}", p.display())));
            }
            Config::load(p)?
        }
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(r) = over.r {
        cfg.model.latent_dim = r;
        cfg.sweep.r_list = vec![r];
    }
    if let Some(b) = over.beta {
        cfg.train.beta_schedule = Schedule::constant(b);
        cfg.sweep.beta_list = vec![b];
    }
    if let Some(l) = over.lambda {
        cfg.train.lambda_schedule = Schedule::constant(l);
        cfg.sweep.lambda_list = vec![l];
    }
    if let Some(e) = over.epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = over.train_size {
        cfg.train.train_size = Some(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(common: &Common, d: &DataArg) -> PathBuf {
    d.data.clone().unwrap_or_else(|| common.out.join("dataset"))
}

fn prepared(cfg: &Config, ds: &Dataset) -> Result<PreparedData> {
    PreparedData::from_dataset(ds, cfg.train.train_size, cfg.train.test_size)
}

fn load_model(common: &Common, c: &CkptArg) -> Result<Ved<f32>> {
    let dir = c.checkpoint.clone().unwrap_or_else(|| common.out.join("train").join("best"));
    let (mut model, _) = load_checkpoint::<f32>(&dir)?;
    model.set_execution(Execution::default());
    Ok(model)
}

fn finish(rec: RunRecorder, dir: &Path, res: Result<()>) -> Result<()> {
    let status = match &res {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    rec.finish(dir, &status)?;
    res
}

fn run(cli: Cli) -> Result<()> {
    let threads = exec::init_thread_pool(None);
    log::debug!("worker threads: {threads:?}");
    let ex = Execution::default();
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common, &Overrides::default())?;
            let mut rec = RunRecorder::new("generate", &cfg);
            let dir = common.out.join("dataset");
            let res = stages::generate(&cfg, ex).and_then(|ds| {
                ds.write_dir(&dir)?;
                println!("dataset: {} samples, {} active cells, {} wells -> {}", ds.n_samples(), ds.n_inputs, ds.n_outputs, dir.display());
                Ok(())
            });
            for f in ["manifest.json", "X.bin", "Y.bin", "mask.bin"] {
                rec.artifact(dir.join(f));
            }
            finish(rec, &common.out, res)
        }
        Command::Cca { common, data } => {
            let cfg = load_config(&common, &Overrides::default())?;
            let mut rec = RunRecorder::new("cca", &cfg);
            let ds = Dataset::read_dir(&data_dir(&common, &data))?;
            let res = stages::run_cca(&ds, cfg.cca.threshold, cfg.cca.eps, &common.out.join("cca")).map(|(s, files)| {
                println!("latent_dim_for_threshold({}) = {}", s.threshold, s.latent_dim);
                files.into_iter().for_each(|f| rec.artifact(f));
            });
            finish(rec, &common.out, res)
        }
        Command::Train { common, over, data } => {
            let cfg = load_config(&common, &over)?;
            let mut rec = RunRecorder::new("train", &cfg);
            let ds = Dataset::read_dir(&data_dir(&common, &data))?;
            let pd = prepared(&cfg, &ds)?;
            let arch = cfg.model.arch(pd.height, pd.width, pd.m);
            let dir = common.out.join("train");
            let res = train::train(&pd, &arch, &cfg.train_config(), Some(&dir), ex).map(|o| {
                println!("best test mse {:.6e} (kld {:.6e}) at epoch {}", o.record.best_mse, o.record.best_kld, o.record.best_epoch);
            });
            for f in ["metrics.csv", "record.json", "best"] {
                rec.artifact(dir.join(f));
            }
            finish(rec, &common.out, res)
        }
        Command::Sweep { common, over, data } => {
            let cfg = load_config(&common, &over)?;
            let mut rec = RunRecorder::new("sweep", &cfg);
            let ds = Dataset::read_dir(&data_dir(&common, &data))?;
            let pd = prepared(&cfg, &ds)?;
            let dir = common.out.join("sweep");
            let res = run_sweep(&cfg, &pd, &dir, ex).map(|_| ());
            rec.artifact(dir.join("sweep.csv"));
            finish(rec, &common.out, res)
        }
        Command::EvalRecon { common, data, ckpt } => {
            let cfg = load_config(&common, &Overrides::default())?;
            let mut rec = RunRecorder::new("eval-recon", &cfg);
            let pd = prepared(&cfg, &Dataset::read_dir(&data_dir(&common, &data))?)?;
            let model = load_model(&common, &ckpt)?;
            let res = stages::eval_recon(&model, &pd, cfg.seed, &common.out.join("eval")).map(|(r, files)| {
                println!("best features {:?}, worst features {:?}", r.best, r.worst);
                files.into_iter().for_each(|f| rec.artifact(f));
            });
            finish(rec, &common.out, res)
        }
        Command::EvalDecode { common, data, ckpt, samples } => {
            let cfg = load_config(&common, &Overrides::default())?;
            let mut rec = RunRecorder::new("eval-decode", &cfg);
            let pd = prepared(&cfg, &Dataset::read_dir(&data_dir(&common, &data))?)?;
            let model = load_model(&common, &ckpt)?;
            let n = samples.or(cfg.eval.decode_samples);
            let res = stages::eval_decode(&model, &pd, n, cfg.seed, &common.out.join("eval")).map(|(r, files)| {
                println!("moment-mismatch score {:.6e}", r.score);
                files.into_iter().for_each(|f| rec.artifact(f));
            });
            finish(rec, &common.out, res)
        }
        Command::EvalCov { common, data, ckpt } => {
            let cfg = load_config(&common, &Overrides::default())?;
            let mut rec = RunRecorder::new("eval-cov", &cfg);
            let pd = prepared(&cfg, &Dataset::read_dir(&data_dir(&common, &data))?)?;
            let model = load_model(&common, &ckpt)?;
            let res = stages::eval_cov(&model, &pd, cfg.seed, &common.out.join("eval")).map(|(r, files)| {
                println!(
                    "off-diagonal energy {:.6e}, diagonal deviation {:.6e}",
                    r.off_diagonal_energy, r.diagonal_deviation
                );
                files.into_iter().for_each(|f| rec.artifact(f));
            });
            finish(rec, &common.out, res)
        }
        Command::Pipeline { common, over } => {
            let cfg = load_config(&common, &over)?;
            let mut rec = RunRecorder::new("pipeline", &cfg);
            let res = pipeline(&cfg, &common.out, ex, &mut rec);
            finish(rec, &common.out, res)
        }
    }
}

fn run_sweep(cfg: &Config, pd: &PreparedData, dir: &Path, ex: Execution) -> Result<Vec<train::SweepRow>> {
    let arch = cfg.model.arch(pd.height, pd.width, pd.m);
    let rows = train::sweep(pd, &arch, &cfg.train_config(), &cfg.sweep, Some(dir), ex)?;
    for r in &rows {
        let mark = if r.best_for_r { "*" } else { " " };
        match (r.best_mse, &r.error) {
            (Some(m), _) => println!("{mark} r={:<4} beta={:<6} lambda={:<6} mse={m:.6e} kld={:.6e}", r.r, r.beta, r.lambda, r.best_kld.unwrap_or(f64::NAN)),
            (None, Some(e)) => println!("  r={:<4} beta={:<6} lambda={:<6} failed: {e}", r.r, r.beta, r.lambda),
            _ => {}
        }
    }
    Ok(rows)
}

fn pipeline(cfg: &Config, out: &Path, ex: Execution, rec: &mut RunRecorder) -> Result<()> {
    let ds_dir = out.join("dataset");
    let ds = stages::generate(cfg, ex)?;
    ds.write_dir(&ds_dir)?;
    rec.artifact(ds_dir);
    rec.stage_done("generate");

    let (cca, files) = stages::run_cca(&ds, cfg.cca.threshold, cfg.cca.eps, &out.join("cca"))?;
    println!("latent_dim_for_threshold({}) = {}", cca.threshold, cca.latent_dim);
    files.into_iter().for_each(|f| rec.artifact(f));
    rec.stage_done("cca");

    let pd = prepared(cfg, &ds)?;
    let sweep_dir = out.join("sweep");
    let rows = run_sweep(cfg, &pd, &sweep_dir, ex)?;
    rec.artifact(sweep_dir.join("sweep.csv"));
    rec.stage_done("sweep");

    let grid = SweepGrid {
        r_list: cfg.sweep.r_list.clone(),
        beta_list: cfg.sweep.beta_list.clone(),
        lambda_list: cfg.sweep.lambda_list.clone(),
    };
    let cells = grid.cells();
    for (i, row) in rows.iter().enumerate() {
        let wanted = if cfg.eval.cells.is_empty() {
            row.best_for_r
        } else {
            cfg.eval.cells.contains(&(row.r, row.beta, row.lambda))
        };
        if !wanted || row.error.is_some() {
            continue;
        }
        let (r, b, l) = cells[i];
        let name = format!("cell{i:03}_r{r}_b{b}_l{l}");
        rec.artifact(sweep_dir.join(&name));
        let (model, _) = load_checkpoint::<f32>(&sweep_dir.join(&name).join("best"))?;
        let dir = out.join("eval").join(&name);
        let (fr, f1) = stages::eval_recon(&model, &pd, cfg.seed, &dir)?;
        let (gr, f2) = stages::eval_decode(&model, &pd, cfg.eval.decode_samples, cfg.seed, &dir)?;
        let (cr, f3) = stages::eval_cov(&model, &pd, cfg.seed, &dir)?;
        println!(
            "{name}: worst feature rmse {:.4e}, decode score {:.4e}, off-diagonal energy {:.4e}",
            fr.worst.first().map(|&j| fr.rmse[j]).unwrap_or(f64::NAN),
            gr.score,
            cr.off_diagonal_energy
        );
        f1.into_iter().chain(f2).chain(f3).for_each(|f| rec.artifact(f));
    }
    rec.stage_done("eval");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
