//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime failure. Every command
//! that writes outputs also writes `repro.json` (arguments, resolved
//! configuration, crate version) and `run.log` into its output directory.
//! `SSVAERR_LOG` sets the log level (`debug`, `info`, `warn`, `error`).

use std::ffi::OsString;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::augment::{preview, AugmentationSpec};
use crate::datagen::{self, read_clip, Manifest, Split, SyntheticConfig, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::labels::DEFAULT_BINS;
use crate::losses::LossConfig;
use crate::model::{Freeze, Model, ModelConfig};
use crate::pretext::{self, Method, PretextConfig};
use crate::trainer::{self, ablate, Grid, Init, RunConfig, Schedule};

pub const REPRO_FILE: &str = "repro.json";
pub const LOG_FILE: &str = "run.log";

#[derive(Parser, Debug)]
#[command(
    name = "ssvaerr",
    version,
    about = "Self-supervised valence/arousal regression from video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled clip dataset and its manifest.
    GenData(GenDataArgs),
    /// Self-supervised trunk pre-training (lira, byol, dino).
    Pretrain(PretrainArgs),
    /// Downstream training with per-epoch validation.
    Train(TrainArgs),
    /// Combined and per-video CCC of a checkpoint on one split.
    Eval(EvalArgs),
    /// Run (or resume) an ablation grid.
    Ablate(AblateArgs),
    /// Write PGM strips of a clip after each augmentation step.
    AugmentPreview(PreviewArgs),
    /// Print the parameter table of a model configuration or checkpoint.
    Describe(DescribeArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Side of the square model input (frames are center-cropped to it).
    #[arg(long, default_value_t = 48)]
    input_size: usize,
    /// Residual stage widths.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    widths: Vec<usize>,
    /// GRU hidden size.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Classification bins per dimension (L).
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Add a reverse-time GRU and concatenate both directions.
    #[arg(long)]
    bidirectional: bool,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            widths: self.widths.clone(),
            hidden: self.hidden,
            num_bins: self.bins,
            bidirectional: self.bidirectional,
        }
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 56)]
    clips: usize,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    /// Frame height and width.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Standard deviation of the Gaussian pixel noise.
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.15)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    test_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long, value_parser = clap::value_parser!(Method))]
    method: Method,
    /// Dataset manifest; the train split is used without labels.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (receives trunk.ssvk and pretext_loss.csv).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    /// Decoupled weight decay (lambda).
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    segment: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// EMA momentum of the target/teacher network.
    #[arg(long, default_value_t = 0.996)]
    ema: f64,
    #[arg(long, default_value_t = 0.1)]
    tau_student: f64,
    #[arg(long, default_value_t = 0.04)]
    tau_teacher: f64,
    #[arg(long, default_value_t = 0.9)]
    center_momentum: f64,
    /// Disable DINO teacher centering.
    #[arg(long)]
    no_centering: bool,
    /// BYOL/DINO on per-frame instead of time-pooled embeddings.
    #[arg(long)]
    per_frame: bool,
    #[arg(long, default_value_t = 128)]
    proj_hidden: usize,
    /// BYOL projection width / DINO output dimension.
    #[arg(long, default_value_t = 64)]
    proj_dim: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `scratch` or `pretext:<trunk checkpoint>`.
    #[arg(long, default_value = "scratch", value_parser = clap::value_parser!(Init))]
    init: Init,
    /// Parameters excluded from training: none, frontend, trunk.
    #[arg(long, default_value = "none", value_parser = clap::value_parser!(Freeze))]
    freeze: Freeze,
    /// Loss weight file (`dim.term=w` lines); default is 1 - CCC on both dimensions.
    #[arg(long)]
    loss: Option<PathBuf>,
    /// Augmentation spec file; default none.
    #[arg(long)]
    augment: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Learning rate, within [7e-5, 3e-4].
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    /// Decoupled weight decay (lambda).
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Clips per batch, within [3, 20].
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Frames per training segment.
    #[arg(long, default_value_t = 64)]
    segment: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learning-rate schedule: constant or cosine.
    #[arg(long, default_value = "constant", value_parser = clap::value_parser!(Schedule))]
    schedule: Schedule,
    /// Use only the first N training clips.
    #[arg(long)]
    max_train_clips: Option<usize>,
    /// Let gradients flow through the nCCE cost norm.
    #[arg(long)]
    cost_norm_gradient: bool,
    /// Record wall-clock seconds in metrics.csv (otherwise 0).
    #[arg(long)]
    record_seconds: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "val", value_parser = clap::value_parser!(Split))]
    split: Split,
    /// Directory for eval.csv (per-video table); printed only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory (results.csv and cells/<hash>/).
    #[arg(long)]
    out: PathBuf,
    /// Run only cells k, k+n, k+2n, ... given as `k/n`.
    #[arg(long, value_parser = parse_shard)]
    shard: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
struct PreviewArgs {
    /// Augmentation spec file.
    #[arg(long)]
    spec: PathBuf,
    /// A clip file; alternatively use --data and --index.
    #[arg(long, conflicts_with = "data")]
    clip: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Manifest position of the clip.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    /// Describe a checkpoint instead of a fresh configuration.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_shard(s: &str) -> std::result::Result<(usize, usize), String> {
    let (k, n) = s.split_once('/').ok_or("expected k/n")?;
    let k: usize = k.parse().map_err(|_| "k must be an integer")?;
    let n: usize = n.parse().map_err(|_| "n must be an integer")?;
    if n == 0 || k >= n {
        return Err(format!("shard {k}/{n}: need 0 <= k < n"));
    }
    Ok((k, n))
}

struct TeeLogger {
    level: log::LevelFilter,
    file: Mutex<Option<File>>,
}

impl log::Log for TeeLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= self.level
    }

    fn log(&self, r: &log::Record) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let line = format!("[{}] {}\n", r.level(), r.args());
        let _ = std::io::stderr().write_all(line.as_bytes());
        if let Some(f) = self.file.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            let _ = f.write_all(line.as_bytes());
        }
    }

    fn flush(&self) {
        if let Some(f) = self.file.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            let _ = f.flush();
        }
    }
}

fn logger() -> &'static TeeLogger {
    static LOGGER: OnceLock<&'static TeeLogger> = OnceLock::new();
    LOGGER.get_or_init(|| {
        let level = match std::env::var("SSVAERR_LOG").as_deref() {
            Ok("debug") => log::LevelFilter::Debug,
            Ok("trace") => log::LevelFilter::Trace,
            Ok("warn") => log::LevelFilter::Warn,
            Ok("error") => log::LevelFilter::Error,
            Ok("off") => log::LevelFilter::Off,
            _ => log::LevelFilter::Info,
        };
        let l: &'static TeeLogger = Box::leak(Box::new(TeeLogger {
            level,
            file: Mutex::new(None),
        }));
        if log::set_logger(l).is_ok() {
            log::set_max_level(level);
        }
        l
    })
}

/// Creates `out`, points the log at `out/run.log` and writes `repro.json`.
fn open_run(out: &Path, argv: &[String], config: serde_json::Value) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(LOG_FILE);
    let f = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    *logger().file.lock().unwrap_or_else(|e| e.into_inner()) = Some(f);
    let record = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "argv": argv,
        "config": config,
    });
    let path = out.join(REPRO_FILE);
    let text = serde_json::to_string_pretty(&record).expect("json values serialize");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(log_path)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn model_json(m: &ModelConfig) -> serde_json::Value {
    json!({
        "input_size": m.input_size,
        "widths": m.widths,
        "hidden": m.hidden,
        "bins": m.num_bins,
        "bidirectional": m.bidirectional,
    })
}

fn gen_data(a: &GenDataArgs, argv: &[String], log_path: &mut Option<PathBuf>) -> Result<()> {
    let cfg = SyntheticConfig {
        num_clips: a.clips,
        frames: a.frames,
        height: a.size,
        width: a.size,
        seed: a.seed,
        noise_std: a.noise,
        val_fraction: a.val_fraction,
        test_fraction: a.test_fraction,
        ..SyntheticConfig::default()
    };
    cfg.validate()?;
    *log_path = Some(open_run(
        &a.out,
        argv,
        json!({
            "command": "gen-data",
            "clips": cfg.num_clips, "frames": cfg.frames, "height": cfg.height, "width": cfg.width,
            "seed": cfg.seed, "noise_std": cfg.noise_std, "walk_sigma": cfg.walk_sigma,
            "smooth_window": cfg.smooth_window, "val_fraction": cfg.val_fraction,
            "test_fraction": cfg.test_fraction,
        }),
    )?);
    let m = datagen::generate(&cfg, &a.out)?;
    let (tr, va, te) = cfg.split_sizes();
    log::info!(
        "wrote {} clips ({tr} train, {va} val, {te} test) to {}; pixel mean {:.3} std {:.3}",
        m.entries.len(),
        a.out.join(MANIFEST_NAME).display(),
        m.stats.mean,
        m.stats.std
    );
    Ok(())
}

fn pretrain_cmd(a: &PretrainArgs, argv: &[String], log_path: &mut Option<PathBuf>) -> Result<()> {
    let cfg = PretextConfig {
        method: a.method,
        model: a.model.config(),
        epochs: a.epochs,
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch: a.batch,
        segment: a.segment,
        seed: a.seed,
        ema: a.ema,
        tau_student: a.tau_student,
        tau_teacher: a.tau_teacher,
        center_momentum: a.center_momentum,
        centering: !a.no_centering,
        per_frame: a.per_frame,
        proj_hidden: a.proj_hidden,
        proj_dim: a.proj_dim,
    };
    cfg.validate()?;
    *log_path = Some(open_run(
        &a.out,
        argv,
        json!({
            "command": "pretrain",
            "method": cfg.method.name(), "data": a.data, "epochs": cfg.epochs, "lr": cfg.lr,
            "weight_decay": cfg.weight_decay, "batch": cfg.batch, "segment": cfg.segment, "seed": cfg.seed,
            "ema": cfg.ema, "tau_student": cfg.tau_student, "tau_teacher": cfg.tau_teacher,
            "center_momentum": cfg.center_momentum, "centering": cfg.centering, "per_frame": cfg.per_frame,
            "proj_hidden": cfg.proj_hidden, "proj_dim": cfg.proj_dim, "model": model_json(&cfg.model),
        }),
    )?);
    let manifest = Manifest::load(&a.data)?;
    let report = pretext::pretrain(&cfg, &manifest, &a.out)?;
    log::info!(
        "wrote {} ({} epochs, final loss {})",
        a.out.join(pretext::TRUNK_FILE).display(),
        report.losses.len(),
        report
            .losses
            .last()
            .map_or("n/a".to_string(), |l| format!("{l:.6}"))
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs, argv: &[String], log_path: &mut Option<PathBuf>) -> Result<()> {
    let loss_text = a.loss.as_deref().map(read_text).transpose()?;
    let aug_text = a.augment.as_deref().map(read_text).transpose()?;
    let run = RunConfig {
        init: a.init.clone(),
        freeze: a.freeze,
        loss: match &a.loss {
            Some(p) => LossConfig::load(p)?,
            None => LossConfig::default(),
        },
        augmentation: match &a.augment {
            Some(p) => AugmentationSpec::load(p)?,
            None => AugmentationSpec::none(),
        },
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch: a.batch,
        epochs: a.epochs,
        segment: a.segment,
        seed: a.seed,
        model: a.model.config(),
        schedule: a.schedule,
        cost_norm_gradient: a.cost_norm_gradient,
        max_train_clips: a.max_train_clips,
        record_seconds: a.record_seconds,
    };
    run.validate()?;
    *log_path = Some(open_run(
        &a.out,
        argv,
        json!({
            "command": "train",
            "init": run.init.to_string(), "freeze": run.freeze.name(), "data": a.data,
            "loss": run.loss.to_string(), "loss_file": a.loss, "loss_text": loss_text,
            "augmentation": run.augmentation.to_string(), "augmentation_file": a.augment,
            "augmentation_text": aug_text, "lr": run.lr, "weight_decay": run.weight_decay,
            "batch": run.batch, "epochs": run.epochs, "segment": run.segment, "seed": run.seed,
            "schedule": run.schedule.to_string(), "max_train_clips": run.max_train_clips,
            "cost_norm_gradient": run.cost_norm_gradient, "record_seconds": run.record_seconds,
            "model": model_json(&run.model),
        }),
    )?);
    let manifest = Manifest::load(&a.data)?;
    let report = trainer::train(&run, &manifest, &a.out)?;
    match (
        report.best_epoch,
        report
            .history
            .iter()
            .find(|r| Some(r.epoch) == report.best_epoch),
    ) {
        (Some(e), Some(r)) => log::info!(
            "best epoch {e}: val CCC arousal {:.4} valence {:.4}",
            r.val.arousal(),
            r.val.valence()
        ),
        _ => log::info!("no epochs run; checkpoints hold the initialization"),
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, argv: &[String], log_path: &mut Option<PathBuf>) -> Result<()> {
    if let Some(out) = &a.out {
        *log_path = Some(open_run(
            out,
            argv,
            json!({"command": "eval", "checkpoint": a.checkpoint, "data": a.data, "split": a.split.name()}),
        )?);
    }
    let manifest = Manifest::load(&a.data)?;
    let report = trainer::evaluate(&a.checkpoint, &manifest, a.split)?;
    if let Some(out) = &a.out {
        let path = out.join("eval.csv");
        std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    let flag = |d: bool| if d { " (degenerate)" } else { "" };
    println!(
        "{} split: ccc_arousal={}{} ccc_valence={}{}",
        a.split,
        report.arousal(),
        flag(report.degenerate[0]),
        report.valence(),
        flag(report.degenerate[1])
    );
    Ok(())
}

fn ablate_cmd(a: &AblateArgs, argv: &[String], log_path: &mut Option<PathBuf>) -> Result<()> {
    let grid = Grid::load(&a.grid)?;
    *log_path = Some(open_run(
        &a.out,
        argv,
        json!({
            "command": "ablate", "grid": a.grid, "grid_text": read_text(&a.grid)?, "data": a.data,
            "shard": a.shard.map(|(k, n)| format!("{k}/{n}")),
        }),
    )?);
    let s = ablate::ablate(&grid, &a.data, &a.out, a.shard)?;
    log::info!(
        "{} cells run, {} cached; results in {}",
        s.ran,
        s.skipped,
        a.out.join(ablate::RESULTS_FILE).display()
    );
    Ok(())
}

fn preview_cmd(a: &PreviewArgs, argv: &[String], log_path: &mut Option<PathBuf>) -> Result<()> {
    let spec = AugmentationSpec::load(&a.spec)?;
    *log_path = Some(open_run(
        &a.out,
        argv,
        json!({
            "command": "augment-preview", "spec": spec.to_string(), "clip": a.clip, "data": a.data,
            "index": a.index, "epoch": a.epoch,
        }),
    )?);
    let (clip, id) = match (&a.clip, &a.data) {
        (Some(p), _) => (read_clip(p)?, a.index as u64),
        (None, Some(d)) => {
            let m = Manifest::load(d)?;
            let e = m
                .entries
                .get(a.index)
                .ok_or_else(|| Error::config(format!("manifest has no clip {}", a.index)))?;
            (read_clip(&m.resolve(&e.clip))?, a.index as u64)
        }
        (None, None) => return Err(Error::config("augment-preview needs --clip or --data")),
    };
    let paths = preview(&clip, &spec, &a.out, id, a.epoch)?;
    for p in paths {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn describe_cmd(a: &DescribeArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => Model::load(p)?,
        None => Model::init(a.model.config(), 0)?,
    };
    let c = &model.config;
    println!(
        "input {0}x{0}, widths {1:?}, hidden {2}, bins {3}, {4}",
        c.input_size,
        c.widths,
        c.hidden,
        c.num_bins,
        if c.bidirectional {
            "bidirectional"
        } else {
            "unidirectional"
        }
    );
    print!("{}", model.describe());
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    logger();
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut log_path = None;
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a, &args, &mut log_path),
        Command::Pretrain(a) => pretrain_cmd(a, &args, &mut log_path),
        Command::Train(a) => train_cmd(a, &args, &mut log_path),
        Command::Eval(a) => eval_cmd(a, &args, &mut log_path),
        Command::Ablate(a) => ablate_cmd(a, &args, &mut log_path),
        Command::AugmentPreview(a) => preview_cmd(a, &args, &mut log_path),
        Command::Describe(a) => describe_cmd(a),
    };
    log::logger().flush();
    *logger().file.lock().unwrap_or_else(|e| e.into_inner()) = None;
    match result {
        Ok(()) => 0,
        Err(e) => {
            let where_ = log_path.map_or("stderr".to_string(), |p| p.display().to_string());
            eprintln!("error: {e} (log: {where_})");
            1
        }
    }
}
