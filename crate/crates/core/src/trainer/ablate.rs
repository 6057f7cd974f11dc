//! Ablation grids: the cartesian product of initializations, loss configs,
//! augmentation specs, freeze modes and seeds, one training run per cell.
//!
//! Cells are identified by a hash of everything that determines their
//! result except the seed, suffixed with the seed. Finished cells are
//! appended to `results.csv` under an exclusive file lock, so a grid can be
//! split across processes (`shard`) and rerun after an interruption; cells
//! already present are skipped.
//!
//! Grid file (`key=value`, axes repeat their key):
//!
//! ```text
//! init=scratch
//! init=pretext:ckpt/lira.ssvk
//! loss=default
//! loss=configs/ccc_ncce.cfg
//! augmentation=none
//! freeze=frontend
//! seed=1
//! seed=2
//! epochs=10
//! ```
//!
//! Paths are relative to the grid file.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{Read as _, Seek as _, SeekFrom, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::augment::AugmentationSpec;
use crate::datagen::{Manifest, Split};
use crate::error::{Error, Result};
use crate::kv;
use crate::losses::LossConfig;
use crate::model::Freeze;

use super::eval::{evaluate_clips, EvalReport, ModelPredictor};
use super::train::{train, Init, RunConfig, Schedule};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str =
    "config_hash,pretext,freeze,loss_config,augmentation,seed,ccc_arousal,ccc_valence,seconds";
const HASH_HEX: usize = 12;

#[derive(Clone, Debug)]
pub struct Grid {
    /// `(label, init)`; the label is `scratch` or the checkpoint path as written.
    pub inits: Vec<(String, Init)>,
    pub losses: Vec<(String, LossConfig)>,
    pub augmentations: Vec<(String, AugmentationSpec)>,
    pub freezes: Vec<Freeze>,
    pub seeds: Vec<u64>,
    /// Settings shared by every cell.
    pub base: RunConfig,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub pretext: String,
    pub loss_name: String,
    pub augmentation_name: String,
    pub run: RunConfig,
}

fn no_comma(key: &str, v: &str) -> Result<()> {
    if v.contains(',') {
        return Err(Error::config(format!(
            "{key}={v}: values may not contain commas"
        )));
    }
    Ok(())
}

impl Grid {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Grid> {
        let mut g = Grid {
            inits: Vec::new(),
            losses: Vec::new(),
            augmentations: Vec::new(),
            freezes: Vec::new(),
            seeds: Vec::new(),
            base: RunConfig::default(),
            split: Split::Val,
        };
        let resolve = |p: &str| -> PathBuf { base_dir.join(p) };
        for e in kv::parse(text).map_err(Error::config)? {
            let v = e.value.as_str();
            let b = &mut g.base;
            match e.key.as_str() {
                "init" => {
                    no_comma("init", v)?;
                    match v.parse::<Init>()? {
                        Init::Scratch => g.inits.push(("scratch".into(), Init::Scratch)),
                        Init::Pretext(p) => {
                            let label = p.display().to_string();
                            g.inits
                                .push((label, Init::Pretext(resolve(&p.to_string_lossy()))));
                        }
                    }
                }
                "loss" => {
                    no_comma("loss", v)?;
                    let cfg = if v == "default" {
                        LossConfig::default()
                    } else {
                        LossConfig::load(&resolve(v))?
                    };
                    g.losses.push((v.to_string(), cfg));
                }
                "augmentation" => {
                    no_comma("augmentation", v)?;
                    let spec = if v == "none" {
                        AugmentationSpec::none()
                    } else {
                        AugmentationSpec::load(&resolve(v))?
                    };
                    g.augmentations.push((v.to_string(), spec));
                }
                "freeze" => g.freezes.push(v.parse()?),
                "seed" => g.seeds.push(kv::parse_u64("seed", v)?),
                "epochs" => b.epochs = kv::parse_usize("epochs", v)?,
                "lr" => b.lr = kv::parse_f64("lr", v)?,
                "weight_decay" => b.weight_decay = kv::parse_f64("weight_decay", v)?,
                "batch" => b.batch = kv::parse_usize("batch", v)?,
                "segment" => b.segment = kv::parse_usize("segment", v)?,
                "max_train_clips" => {
                    b.max_train_clips = Some(kv::parse_usize("max_train_clips", v)?)
                }
                "schedule" => b.schedule = v.parse::<Schedule>()?,
                "cost_norm_gradient" => {
                    b.cost_norm_gradient = kv::parse_bool("cost_norm_gradient", v)?
                }
                "input_size" => b.model.input_size = kv::parse_usize("input_size", v)?,
                "widths" => {
                    b.model.widths = v
                        .split(',')
                        .map(|w| kv::parse_usize("widths", w.trim()))
                        .collect::<Result<_>>()?
                }
                "hidden" => b.model.hidden = kv::parse_usize("hidden", v)?,
                "bins" => b.model.num_bins = kv::parse_usize("bins", v)?,
                "bidirectional" => b.model.bidirectional = kv::parse_bool("bidirectional", v)?,
                "split" => g.split = v.parse()?,
                other => {
                    return Err(Error::config(format!(
                        "line {}: unknown grid key {other:?}",
                        e.line
                    )))
                }
            }
        }
        if g.inits.is_empty() {
            g.inits.push(("scratch".into(), Init::Scratch));
        }
        if g.losses.is_empty() {
            g.losses.push(("default".into(), LossConfig::default()));
        }
        if g.augmentations.is_empty() {
            g.augmentations
                .push(("none".into(), AugmentationSpec::none()));
        }
        if g.freezes.is_empty() {
            g.freezes.push(Freeze::None);
        }
        if g.seeds.is_empty() {
            g.seeds.push(0);
        }
        g.base.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Grid> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Grid::parse(&text, path.parent().unwrap_or(Path::new("."))).map_err(|e| match e {
            Error::Config(d) => Error::format("grid", path, d),
            other => other,
        })
    }

    /// Cells in axis order: init, loss, augmentation, freeze, seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (pl, init) in &self.inits {
            for (ll, loss) in &self.losses {
                for (al, aug) in &self.augmentations {
                    for &freeze in &self.freezes {
                        for &seed in &self.seeds {
                            out.push(Cell {
                                pretext: pl.clone(),
                                loss_name: ll.clone(),
                                augmentation_name: al.clone(),
                                run: RunConfig {
                                    init: init.clone(),
                                    freeze,
                                    loss: *loss,
                                    augmentation: aug.clone(),
                                    seed,
                                    ..self.base.clone()
                                },
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Cell {
    /// Every input that determines the cell's result except the seed.
    pub fn canonical(&self, split: Split, data_digest: &str) -> Result<String> {
        let r = &self.run;
        let init = match &r.init {
            Init::Scratch => "scratch".to_string(),
            Init::Pretext(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                format!("pretext:{}", sha256_hex(&bytes))
            }
        };
        let m = &r.model;
        Ok(format!(
            "init={init}\nfreeze={}\nloss={}\naugmentation={}\nlr={}\nweight_decay={}\nbatch={}\nepochs={}\n\
             segment={}\nmax_train_clips={:?}\nschedule={}\ncost_norm_gradient={}\ninput_size={}\nwidths={:?}\n\
             hidden={}\nbins={}\nbidirectional={}\nsplit={split}\ndata={data_digest}\n",
            r.freeze,
            r.loss,
            r.augmentation.to_string().replace('\n', ";"),
            r.lr,
            r.weight_decay,
            r.batch,
            r.epochs,
            r.segment,
            r.max_train_clips,
            r.schedule,
            r.cost_norm_gradient,
            m.input_size,
            m.widths,
            m.hidden,
            m.num_bins,
            m.bidirectional,
        ))
    }

    /// 12 hex digits of the canonical config digest, then `-s<seed>`.
    pub fn config_hash(&self, split: Split, data_digest: &str) -> Result<String> {
        let digest = sha256_hex(self.canonical(split, data_digest)?.as_bytes());
        Ok(format!("{}-s{}", &digest[..HASH_HEX], self.run.seed))
    }
}

/// Opens the results file under an exclusive lock, drops a torn trailing
/// line, writes the header when empty, appends `row` unless its hash is
/// already present, and returns the set of completed hashes.
fn with_results(path: &Path, row: Option<(&str, &str)>) -> Result<HashSet<String>> {
    let io = |e| Error::io(path, e);
    let mut f: File = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)
        .map_err(io)?;
    f.lock().map_err(io)?;
    let mut text = String::new();
    f.read_to_string(&mut text).map_err(io)?;
    let columns = RESULTS_HEADER.split(',').count();
    let keep = match text.rfind('\n') {
        Some(i) if i + 1 < text.len() => i + 1,
        Some(_) => text.len(),
        None => 0,
    };
    if keep < text.len() {
        log::warn!("{}: dropping incomplete trailing line", path.display());
        f.set_len(keep as u64).map_err(io)?;
        text.truncate(keep);
    }
    if text.is_empty() {
        text = format!("{RESULTS_HEADER}\n");
        f.set_len(0).map_err(io)?;
        f.seek(SeekFrom::Start(0)).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
    } else if text.lines().next() != Some(RESULTS_HEADER) {
        return Err(Error::format("results", path, "unexpected header"));
    }
    let mut done = HashSet::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.split(',').count() != columns {
            return Err(Error::format(
                "results",
                path,
                format!("line {}: malformed row", i + 1),
            ));
        }
        done.insert(line.split(',').next().unwrap_or_default().to_string());
    }
    if let Some((hash, line)) = row {
        if done.insert(hash.to_string()) {
            f.seek(SeekFrom::End(0)).map_err(io)?;
            f.write_all(format!("{line}\n").as_bytes()).map_err(io)?;
            f.sync_data().map_err(io)?;
        }
    }
    Ok(done)
}

/// Completed hashes in an existing results file (empty when absent).
pub fn completed(out_dir: &Path) -> Result<HashSet<String>> {
    let path = out_dir.join(RESULTS_FILE);
    if !path.exists() {
        return Ok(HashSet::new());
    }
    with_results(&path, None)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AblateSummary {
    pub ran: usize,
    pub skipped: usize,
}

/// Trains and scores one cell into `dir`.
pub fn run_cell(cell: &Cell, manifest: &Manifest, split: Split, dir: &Path) -> Result<EvalReport> {
    let report = train(&cell.run, manifest, dir)?;
    let clips = manifest.load_split(split, false)?;
    evaluate_clips(
        &ModelPredictor {
            model: &report.best,
            stats: manifest.stats,
        },
        &clips,
    )
}

/// Runs every cell not yet in `out_dir/results.csv`. With `shard = (k, n)`
/// only cells whose position is `k` modulo `n` are considered.
pub fn ablate(
    grid: &Grid,
    manifest_path: &Path,
    out_dir: &Path,
    shard: Option<(usize, usize)>,
) -> Result<AblateSummary> {
    if let Some((k, n)) = shard {
        if n == 0 || k >= n {
            return Err(Error::config(format!("shard {k}/{n} out of range")));
        }
    }
    let manifest = Manifest::load(manifest_path)?;
    let data_bytes = std::fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let data_digest = sha256_hex(&data_bytes);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = out_dir.join(RESULTS_FILE);
    let mut done = with_results(&results, None)?;
    let mut summary = AblateSummary::default();
    let cells = grid.cells();
    for (i, cell) in cells.iter().enumerate() {
        if shard.is_some_and(|(k, n)| i % n != k) {
            continue;
        }
        let hash = cell.config_hash(grid.split, &data_digest)?;
        if done.contains(&hash) {
            log::info!("cell {}/{} {hash}: cached", i + 1, cells.len());
            summary.skipped += 1;
            continue;
        }
        log::info!(
            "cell {}/{} {hash}: init={} loss={} augmentation={} freeze={} seed={}",
            i + 1,
            cells.len(),
            cell.pretext,
            cell.loss_name,
            cell.augmentation_name,
            cell.run.freeze,
            cell.run.seed
        );
        let dir = out_dir.join("cells").join(&hash);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let canonical = cell.canonical(grid.split, &data_digest)?;
        let cfg_path = dir.join("cell.cfg");
        std::fs::write(&cfg_path, format!("seed={}\n{canonical}", cell.run.seed))
            .map_err(|e| Error::io(&cfg_path, e))?;
        let started = Instant::now();
        let report = run_cell(cell, &manifest, grid.split, &dir)?;
        let line = format!(
            "{hash},{},{},{},{},{},{},{},{:.3}",
            cell.pretext,
            cell.run.freeze,
            cell.loss_name,
            cell.augmentation_name,
            cell.run.seed,
            report.arousal(),
            report.valence(),
            started.elapsed().as_secs_f64()
        );
        done = with_results(&results, Some((&hash, &line)))?;
        summary.ran += 1;
    }
    Ok(summary)
}

/// Parsed results rows, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub config_hash: String,
    pub pretext: String,
    pub freeze: String,
    pub loss_config: String,
    pub augmentation: String,
    pub seed: u64,
    pub ccc_arousal: f64,
    pub ccc_valence: f64,
    pub seconds: f64,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |i: usize, d: &str| Error::format("results", path, format!("line {}: {d}", i + 1));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 9 {
            return Err(bad(i, "expected 9 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i, "bad number"));
        rows.push(ResultRow {
            config_hash: c[0].into(),
            pretext: c[1].into(),
            freeze: c[2].into(),
            loss_config: c[3].into(),
            augmentation: c[4].into(),
            seed: c[5].parse().map_err(|_| bad(i, "bad seed"))?,
            ccc_arousal: num(c[6])?,
            ccc_valence: num(c[7])?,
            seconds: num(c[8])?,
        });
    }
    Ok(rows)
}
