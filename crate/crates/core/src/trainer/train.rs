//! Downstream training loop.
//!
//! An epoch visits every training clip once in a seeded order, cutting one
//! random segment per clip. Segments are augmented, center-cropped to the
//! model input, normalized and batched; the composite loss covers only the
//! real (unpadded) frames. After each epoch the model is scored on the
//! validation split and the best checkpoint (by mean combined CCC) is kept.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use indexmap::IndexMap;

use crate::augment::{AugmentationSpec, Clip};
use crate::datagen::{sample_segment, LabeledClip, Manifest, Split, Stats};
use crate::diffcore::{Array, Graph};
use crate::error::{Error, Result};
use crate::labels::{AffectSeries, Discretizer};
use crate::losses::{composite_loss, ClassTargets, LossConfig};
use crate::model::{checkpoint, Freeze, Model, ModelConfig};
use crate::rng::{self, purpose};

use super::eval::{evaluate_clips, EvalReport, ModelPredictor};
use super::optimizer::{AdamW, DEFAULT_WEIGHT_DECAY};

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_FILE: &str = "best.ssvk";
pub const LAST_FILE: &str = "last.ssvk";
pub const METRICS_HEADER: &str = "epoch,train_loss,val_ccc_arousal,val_ccc_valence,seconds";
pub const LR_RANGE: (f64, f64) = (7e-5, 3e-4);
pub const BATCH_RANGE: (usize, usize) = (3, 20);

/// Where the network weights start.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    Scratch,
    /// Trunk copied from a pretext checkpoint; heads freshly initialized.
    Pretext(PathBuf),
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Init::Scratch => f.write_str("scratch"),
            Init::Pretext(p) => write!(f, "pretext:{}", p.display()),
        }
    }
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "scratch" => Ok(Init::Scratch),
            Some(("pretext", p)) if !p.is_empty() => Ok(Init::Pretext(p.into())),
            _ => Err(Error::config(format!(
                "unknown init {s:?} (scratch, pretext:<checkpoint>)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from the initial rate to zero over the run.
    Cosine,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            _ => Err(Error::config(format!(
                "unknown schedule {s:?} (constant, cosine)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub init: Init,
    pub freeze: Freeze,
    pub loss: LossConfig,
    pub augmentation: AugmentationSpec,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub segment: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub cost_norm_gradient: bool,
    /// Keep only the first `n` training clips (manifest order).
    pub max_train_clips: Option<usize>,
    /// Write wall-clock seconds into the metric log (otherwise 0, keeping
    /// the log byte-reproducible).
    pub record_seconds: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            init: Init::Scratch,
            freeze: Freeze::None,
            loss: LossConfig::default(),
            augmentation: AugmentationSpec::none(),
            lr: 3e-4,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            batch: 4,
            epochs: 10,
            segment: 64,
            seed: 0,
            model: ModelConfig::default(),
            schedule: Schedule::Constant,
            cost_norm_gradient: false,
            max_train_clips: None,
            record_seconds: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(LR_RANGE.0..=LR_RANGE.1).contains(&self.lr) {
            return Err(Error::config(format!(
                "learning rate {} outside [{}, {}]",
                self.lr, LR_RANGE.0, LR_RANGE.1
            )));
        }
        if !(BATCH_RANGE.0..=BATCH_RANGE.1).contains(&self.batch) {
            return Err(Error::config(format!(
                "batch size {} outside [{}, {}]",
                self.batch, BATCH_RANGE.0, BATCH_RANGE.1
            )));
        }
        if self.segment == 0 {
            return Err(Error::config("segment length must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(
                "weight decay must be finite and non-negative",
            ));
        }
        if self.max_train_clips == Some(0) {
            return Err(Error::config("max_train_clips must be positive"));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine if total == 0 => self.lr,
            Schedule::Cosine => {
                0.5 * self.lr * (1.0 + libm::cos(std::f64::consts::PI * step as f64 / total as f64))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalReport,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose checkpoint is `best.ssvk`; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub last: Model,
    pub best: Model,
}

impl TrainReport {
    pub fn final_val(&self) -> Option<&EvalReport> {
        self.history.last().map(|r| &r.val)
    }
}

/// Initial model for `run`: seeded init, then the pretext trunk if any.
pub fn initial_model(run: &RunConfig) -> Result<Model> {
    let mut model = Model::init(run.model.clone(), run.seed)?;
    if let Init::Pretext(path) = &run.init {
        model.transfer_trunk(&checkpoint::load(path)?)?;
    }
    Ok(model)
}

/// Trains on the train split and validates on the val split of `manifest`.
pub fn train(run: &RunConfig, manifest: &Manifest, out_dir: &Path) -> Result<TrainReport> {
    run.validate()?;
    let mut train = manifest.load_split(Split::Train, false)?;
    if let Some(n) = run.max_train_clips {
        train.truncate(n);
    }
    let val = manifest.load_split(Split::Val, false)?;
    train_clips(run, &train, &val, &manifest.stats, out_dir)
}

fn prepare(
    run: &RunConfig,
    aug: &AugmentationSpec,
    c: &LabeledClip,
    epoch: usize,
) -> Result<(Clip, AffectSeries)> {
    let mut r = rng::keyed(&[run.seed, purpose::SEGMENT, c.id, epoch as u64]);
    let seg = sample_segment(c, run.segment, &mut r)?;
    let clip = aug.apply(&seg.clip, c.id, epoch as u64)?;
    let s = run.model.input_size;
    let clip = clip.center_crop(s, s)?;
    let labels = AffectSeries {
        valence: seg.labels.valence[..seg.valid].to_vec(),
        arousal: seg.labels.arousal[..seg.valid].to_vec(),
    };
    Ok((clip, labels))
}

pub fn train_clips(
    run: &RunConfig,
    train: &[LabeledClip],
    val: &[LabeledClip],
    stats: &Stats,
    out_dir: &Path,
) -> Result<TrainReport> {
    run.validate()?;
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if val.is_empty() {
        return Err(Error::config("validation split is empty"));
    }
    let (h, w) = (train[0].clip.height(), train[0].clip.width());
    run.augmentation.validate_for(h, w)?;
    let (ah, aw) = run.augmentation.output_size(h, w);
    if ah < run.model.input_size || aw < run.model.input_size {
        return Err(Error::config(format!(
            "augmented frames {ah}x{aw} smaller than model input {}",
            run.model.input_size
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut model = initial_model(run)?;
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score = f64::NEG_INFINITY;
    let labels: Vec<&AffectSeries> = train.iter().map(|c| &c.labels).collect();
    let mut classes = ClassTargets::fitted(
        Discretizer::new(run.model.num_bins, -1.0, 1.0)?,
        &labels,
        run.seed,
    );
    classes.cost_norm_gradient = run.cost_norm_gradient;
    let aug = run
        .augmentation
        .with_seed(rng::derive_seed(&[run.augmentation.seed, run.seed]));
    let mut opt = AdamW::new(run.lr, run.weight_decay);
    let batches_per_epoch = train.len().div_ceil(run.batch);
    let total_steps = batches_per_epoch * run.epochs;

    let mut metrics = format!("{METRICS_HEADER}\n");
    let mut history = Vec::with_capacity(run.epochs);
    for epoch in 0..run.epochs {
        let started = Instant::now();
        let order = rng::permutation(train.len(), &[run.seed, purpose::SHUFFLE, epoch as u64]);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(run.batch).enumerate() {
            let prepared: Vec<(Clip, AffectSeries)> = chunk
                .iter()
                .map(|&i| prepare(run, &aug, &train[i], epoch))
                .collect::<Result<_>>()?;
            let clips: Vec<&Clip> = prepared.iter().map(|(c, _)| c).collect();
            let x = stats.normalize(&clips)?;
            let (b, t) = (x.shape()[0], x.shape()[1]);

            let mut g = Graph::new();
            let p = model.bind(&mut g, run.freeze);
            let xn = g.constant(x);
            let out = model.forward(&mut g, &p, xn)?;
            let l = run.model.num_bins;
            let reg = g.reshape(out.reg, &[b * t, 2])?;
            let logits = g.reshape(out.logits, &[b * t, 2, l])?;
            let rows: Vec<usize> = prepared
                .iter()
                .enumerate()
                .flat_map(|(k, (_, y))| (0..y.len()).map(move |f| k * t + f))
                .collect();
            let reg = g.gather(reg, &rows)?;
            let logits = g.gather(logits, &rows)?;
            let targets = AffectSeries {
                valence: prepared
                    .iter()
                    .flat_map(|(_, y)| y.valence.iter().copied())
                    .collect(),
                arousal: prepared
                    .iter()
                    .flat_map(|(_, y)| y.arousal.iter().copied())
                    .collect(),
            };
            let (loss, breakdown) =
                composite_loss(&mut g, reg, logits, &targets, &run.loss, &classes)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                let dump = out_dir.join(format!("nonfinite_epoch{}_batch{bi}.txt", epoch + 1));
                let ids: Vec<String> = chunk.iter().map(|&i| train[i].id.to_string()).collect();
                let terms: Vec<String> = breakdown
                    .terms
                    .iter()
                    .map(|(d, term, v)| format!("{}.{}={v}", d.name(), term.name()))
                    .collect();
                let text = format!(
                    "epoch={}\nbatch={bi}\nclips={}\nloss={value}\nterms={}\n",
                    epoch + 1,
                    ids.join(","),
                    terms.join(";")
                );
                std::fs::write(&dump, text).map_err(|e| Error::io(&dump, e))?;
                return Err(Error::NonFinite {
                    epoch: epoch + 1,
                    batch: bi,
                    dump,
                });
            }
            let grads = g.backward(loss)?;
            let grads: IndexMap<String, Array> = p
                .iter()
                .filter(|(n, _)| !run.freeze.is_frozen(n))
                .map(|(n, id)| {
                    let gr = grads
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| Array::zeros(g.shape(id)));
                    (n.to_string(), gr)
                })
                .collect();
            opt.lr = run.lr_at(epoch * batches_per_epoch + bi, total_steps);
            opt.step(&mut model.params, &grads)?;
            loss_sum += value;
            log::debug!("epoch {} batch {bi}: loss {value:.6}", epoch + 1);
        }
        let train_loss = loss_sum / batches_per_epoch as f64;
        let report = evaluate_clips(
            &ModelPredictor {
                model: &model,
                stats: *stats,
            },
            val,
        )?;
        let seconds = if run.record_seconds {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        log::info!(
            "epoch {}: train loss {train_loss:.6}, val CCC arousal {:.4} valence {:.4}",
            epoch + 1,
            report.arousal(),
            report.valence()
        );
        metrics.push_str(&format!(
            "{},{train_loss},{},{},{seconds}\n",
            epoch + 1,
            report.arousal(),
            report.valence()
        ));
        if report.mean() > best_score {
            best_score = report.mean();
            best = model.clone();
            best_epoch = Some(epoch + 1);
            best.save(&out_dir.join(BEST_FILE))?;
        }
        model.save(&out_dir.join(LAST_FILE))?;
        write_text(&out_dir.join(METRICS_FILE), &metrics)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val: report,
            seconds,
        });
    }
    if run.epochs == 0 {
        best.save(&out_dir.join(BEST_FILE))?;
        model.save(&out_dir.join(LAST_FILE))?;
        write_text(&out_dir.join(METRICS_FILE), &metrics)?;
    }
    Ok(TrainReport {
        history,
        best_epoch,
        last: model,
        best,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_parsing() {
        assert_eq!("scratch".parse::<Init>().unwrap(), Init::Scratch);
        assert_eq!(
            "pretext:ckpt/lira.ssvk".parse::<Init>().unwrap(),
            Init::Pretext("ckpt/lira.ssvk".into())
        );
        assert!("pretext:".parse::<Init>().is_err());
        assert!("imagenet".parse::<Init>().is_err());
        let i = Init::Pretext("a/b.ssvk".into());
        assert_eq!(i.to_string().parse::<Init>().unwrap(), i);
    }

    #[test]
    fn envelopes_enforced() {
        let ok = RunConfig::default();
        assert!(ok.validate().is_ok());
        assert!(RunConfig {
            lr: 1e-3,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            batch: 2,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(RunConfig { batch: 21, ..ok }.validate().is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let run = RunConfig {
            schedule: Schedule::Cosine,
            ..Default::default()
        };
        assert_eq!(run.lr_at(0, 10), run.lr);
        assert!((run.lr_at(5, 10) - run.lr / 2.0).abs() < 1e-18);
        assert_eq!(RunConfig::default().lr_at(7, 10), 3e-4);
    }
}
