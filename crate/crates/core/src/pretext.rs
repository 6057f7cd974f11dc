//! Self-supervised trunk pre-training.
//!
//! Three objectives share the residual trunk of [`crate::model`]:
//!
//! * BYOL: an online network (trunk, projector, predictor) predicts the
//!   projection a slow EMA target network assigns to another view of the
//!   same clip.
//! * DINO: a student matches the centered, sharpened output distribution of
//!   an EMA teacher; the teacher only sees global crops.
//! * LiRA-style: trunk plus a small GRU head regress the clip's per-frame
//!   feature stream.
//!
//! Views are clip-level: one crop (and flip) is applied to every frame of a
//! segment. BYOL and DINO compare time-pooled embeddings by default, or
//! per-frame embeddings with [`PretextConfig::per_frame`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::augment::{apply_step, Clip, Step};
use crate::datagen::{sample_segment, LabeledClip, Manifest, Segment, Split, Stats, FEATURE_DIM};
use crate::diffcore::{softmax_row, Array, Graph, NodeId};
use crate::error::{Error, Result};
use crate::losses::mse;
use crate::model::{
    checkpoint, gru_forward, init_gru, init_linear, is_trunk_param, linear, trunk_forward, Bound,
    Model, ModelConfig, Tensors, INPUT_SIZE_KEY,
};
use crate::rng::{self, purpose};
use crate::trainer::optimizer::AdamW;

pub const TRUNK_FILE: &str = "trunk.ssvk";
pub const LOSS_FILE: &str = "pretext_loss.csv";
const NORM_EPS: f64 = 1e-12;
/// Fractions of the frame area covered by global and local DINO crops.
pub const GLOBAL_CROP_AREA: f64 = 0.75;
pub const LOCAL_CROP_AREA: f64 = 0.40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Lira,
    Byol,
    Dino,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lira => "lira",
            Method::Byol => "byol",
            Method::Dino => "dino",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lira" => Ok(Method::Lira),
            "byol" => Ok(Method::Byol),
            "dino" => Ok(Method::Dino),
            _ => Err(Error::config(format!(
                "unknown pretext method {s:?} (lira, byol, dino)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretextConfig {
    pub method: Method,
    /// Trunk shape; `hidden` also sizes the LiRA recurrent head.
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub segment: usize,
    pub seed: u64,
    /// EMA momentum of the target/teacher.
    pub ema: f64,
    pub tau_student: f64,
    pub tau_teacher: f64,
    pub center_momentum: f64,
    pub centering: bool,
    pub per_frame: bool,
    pub proj_hidden: usize,
    /// BYOL projection width and DINO output dimension.
    pub proj_dim: usize,
}

impl Default for PretextConfig {
    fn default() -> Self {
        PretextConfig {
            method: Method::Lira,
            model: ModelConfig::default(),
            epochs: 10,
            lr: 3e-4,
            weight_decay: crate::trainer::optimizer::DEFAULT_WEIGHT_DECAY,
            batch: 4,
            segment: 32,
            seed: 0,
            ema: 0.996,
            tau_student: 0.1,
            tau_teacher: 0.04,
            center_momentum: 0.9,
            centering: true,
            per_frame: false,
            proj_hidden: 128,
            proj_dim: 64,
        }
    }
}

impl PretextConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name}={v} outside [0, 1]")))
            }
        };
        unit("ema", self.ema)?;
        unit("center momentum", self.center_momentum)?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        if self.batch == 0 || self.segment == 0 || self.proj_hidden == 0 || self.proj_dim == 0 {
            return Err(Error::config(
                "batch, segment and head sizes must be positive",
            ));
        }
        if !(self.tau_student > 0.0 && self.tau_teacher > 0.0) {
            return Err(Error::config("temperatures must be positive"));
        }
        if self.method == Method::Dino && self.tau_teacher >= self.tau_student {
            return Err(Error::config(format!(
                "teacher temperature {} must be below student temperature {}",
                self.tau_teacher, self.tau_student
            )));
        }
        Ok(())
    }

    pub fn dino(&self) -> DinoOptions {
        DinoOptions {
            tau_student: self.tau_student,
            tau_teacher: self.tau_teacher,
            center_momentum: self.center_momentum,
        }
    }
}

/// `target ← τ·target + (1 − τ)·online` for every tensor of `target`.
pub fn ema_update(target: &mut Tensors, online: &Tensors, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::contract(format!(
            "EMA momentum {tau} outside [0, 1]"
        )));
    }
    for (name, t) in target.iter() {
        match online.get(name) {
            Some(o) if o.shape() == t.shape() => {}
            Some(o) => {
                return Err(Error::contract(format!(
                    "{name}: target shape {:?}, online shape {:?}",
                    t.shape(),
                    o.shape()
                )))
            }
            None => {
                return Err(Error::contract(format!(
                    "{name}: missing from online parameters"
                )))
            }
        }
    }
    for (name, t) in target.iter_mut() {
        for (x, &o) in t.data_mut().iter_mut().zip(online[name].data()) {
            *x = tau * *x + (1.0 - tau) * o;
        }
    }
    Ok(())
}

fn as_rows(g: &mut Graph, a: NodeId) -> Result<NodeId> {
    match g.shape(a).len() {
        1 => {
            let n = g.shape(a)[0];
            g.reshape(a, &[1, n])
        }
        2 => Ok(a),
        _ => Err(Error::contract(format!(
            "expected [N, P] or [P], got {:?}",
            g.shape(a)
        ))),
    }
}

/// Mean over rows of `2 − 2·cos(q, z)`, in `[0, 4]`. `z` should be a
/// constant (the target branch).
pub fn byol_loss(g: &mut Graph, q: NodeId, z: NodeId) -> Result<NodeId> {
    if g.shape(q) != g.shape(z) {
        return Err(Error::contract(format!(
            "byol: prediction {:?} vs target {:?}",
            g.shape(q),
            g.shape(z)
        )));
    }
    let q = as_rows(g, q)?;
    let z = as_rows(g, z)?;
    let nq = g.l2_normalize(q, NORM_EPS);
    let nz = g.l2_normalize(z, NORM_EPS);
    let prod = g.mul(nq, nz)?;
    let cos = g.sum_axis(prod, 1)?;
    let cos = g.mean(cos);
    let scaled = g.mul_scalar(cos, -2.0);
    Ok(g.add_scalar(scaled, 2.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DinoOptions {
    pub tau_student: f64,
    pub tau_teacher: f64,
    pub center_momentum: f64,
}

/// Row-wise `softmax((logits − center) / τ)` for `[N, K]` logits.
pub fn teacher_probs(logits: &Array, center: &Array, tau: f64) -> Result<Array> {
    let s = logits.shape();
    if s.len() != 2 || center.shape() != [s[1]] {
        return Err(Error::contract(format!(
            "teacher logits {s:?} with center {:?}",
            center.shape()
        )));
    }
    let k = s[1];
    let inv = 1.0 / tau;
    let mut out = vec![0.0; logits.len()];
    let mut row = vec![0.0; k];
    for (src, dst) in logits.data().chunks(k).zip(out.chunks_mut(k)) {
        for ((r, &x), &c) in row.iter_mut().zip(src).zip(center.data()) {
            *r = (x - c) * inv;
        }
        softmax_row(&row, dst);
    }
    Array::new(s.to_vec(), out)
}

/// Self-distillation loss and the updated center.
///
/// `teacher[i]` holds the teacher logits of global view `i`, which is also
/// student view `i`. The loss averages `−Σ p_t log p_s` over every
/// (teacher view, student view) pair with different view indices and over
/// rows. The returned center is `m·center + (1 − m)·mean(teacher rows)`.
pub fn dino_loss(
    g: &mut Graph,
    student: &[NodeId],
    teacher: &[Array],
    center: &Array,
    opts: &DinoOptions,
) -> Result<(NodeId, Array)> {
    if teacher.is_empty() {
        return Err(Error::contract("dino needs at least one global view"));
    }
    if teacher.len() > student.len() {
        return Err(Error::contract(format!(
            "{} teacher views but only {} student views",
            teacher.len(),
            student.len()
        )));
    }
    let shape = teacher[0].shape().to_vec();
    for t in teacher {
        if t.shape() != shape.as_slice() {
            return Err(Error::contract("teacher views differ in shape"));
        }
    }
    for &s in student {
        if g.shape(s) != shape.as_slice() {
            return Err(Error::contract(format!(
                "student logits {:?} vs teacher {:?}",
                g.shape(s),
                shape
            )));
        }
    }
    let probs: Vec<NodeId> = teacher
        .iter()
        .map(|t| teacher_probs(t, center, opts.tau_teacher).map(|p| g.constant(p)))
        .collect::<Result<_>>()?;
    let log_p: Vec<NodeId> = student
        .iter()
        .map(|&s| {
            let scaled = g.mul_scalar(s, 1.0 / opts.tau_student);
            g.log_softmax(scaled)
        })
        .collect();
    let mut total: Option<NodeId> = None;
    let mut pairs = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        for (v, &lp) in log_p.iter().enumerate() {
            if i == v {
                continue;
            }
            let prod = g.mul(p, lp)?;
            let s = g.sum(prod);
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
            pairs += 1;
        }
    }
    let total = total.ok_or_else(|| Error::contract("dino needs at least one cross-view pair"))?;
    let loss = g.mul_scalar(total, -1.0 / (pairs * shape[0]) as f64);

    let k = shape[1];
    let mut mean = vec![0.0; k];
    let mut rows = 0usize;
    for t in teacher {
        for row in t.data().chunks(k) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
            rows += 1;
        }
    }
    let m = opts.center_momentum;
    let next = center
        .data()
        .iter()
        .zip(&mean)
        .map(|(&c, &s)| m * c + (1.0 - m) * (s / rows as f64))
        .collect();
    Ok((loss, Array::new(vec![k], next)?))
}

/// Trunk, GRU head and linear readout regressing the `[B, T, D]` feature
/// stream; MSE over the first `valid[b]` frames of each sequence.
pub fn lira_loss(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    x: NodeId,
    target: &Array,
    valid: &[usize],
) -> Result<NodeId> {
    let xs = g.shape(x).to_vec();
    let ts = target.shape();
    if xs.len() != 4 || ts.len() != 3 || ts[0] != xs[0] || ts[1] != xs[1] {
        return Err(Error::contract(format!(
            "feature stream {ts:?} does not match clip batch {xs:?}"
        )));
    }
    if valid.len() != xs[0] || valid.iter().any(|&v| v > xs[1]) {
        return Err(Error::contract("valid frame counts do not match the batch"));
    }
    let (b, t, d) = (ts[0], ts[1], ts[2]);
    let out = lira_head(g, p, cfg, x, d)?;
    let rows: Vec<usize> = (0..b)
        .flat_map(|i| (0..valid[i]).map(move |f| i * t + f))
        .collect();
    if rows.is_empty() {
        return Ok(g.constant(Array::scalar(0.0)));
    }
    let pred = g.gather(out, &rows)?;
    let tgt: Vec<f64> = rows
        .iter()
        .flat_map(|&r| target.data()[r * d..(r + 1) * d].iter().copied())
        .collect();
    let tgt = g.constant(Array::new(vec![rows.len(), d], tgt)?);
    mse(g, tgt, pred)
}

/// Per-frame feature predictions `[B·T, D]`.
fn lira_head(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: NodeId, d: usize) -> Result<NodeId> {
    let feats = trunk_forward(g, p, cfg, x)?;
    let (b, t) = (g.shape(feats)[0], g.shape(feats)[1]);
    let h = gru_forward(g, p, "lira_gru", feats, cfg.hidden, false)?;
    let flat = g.reshape(h, &[b * t, cfg.hidden])?;
    let out = linear(g, p, "lira_head", flat)?;
    if g.shape(out)[1] != d {
        return Err(Error::contract(format!(
            "head width {} vs feature width {d}",
            g.shape(out)[1]
        )));
    }
    Ok(out)
}

fn mlp(g: &mut Graph, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = linear(g, p, &format!("{prefix}.l1"), x)?;
    let h = g.relu(h);
    linear(g, p, &format!("{prefix}.l2"), h)
}

fn init_mlp(prefix: &str, input: usize, hidden: usize, output: usize, seed: u64) -> Tensors {
    let mut t = init_linear(&format!("{prefix}.l1"), input, hidden, seed);
    t.extend(init_linear(&format!("{prefix}.l2"), hidden, output, seed));
    t
}

/// Trunk embedding: time-pooled `[B, C]`, or `[B·T, C]` per frame.
fn embed(g: &mut Graph, p: &Bound, cfg: &PretextConfig, x: NodeId) -> Result<NodeId> {
    let f = trunk_forward(g, p, &cfg.model, x)?;
    if cfg.per_frame {
        let s = g.shape(f).to_vec();
        g.reshape(f, &[s[0] * s[1], s[2]])
    } else {
        g.mean_axis(f, 1)
    }
}

/// Side of a square crop covering `area` of an `h × w` frame.
pub fn crop_side(h: usize, w: usize, area: f64) -> usize {
    let side = libm::round(libm::sqrt(area) * h.min(w) as f64) as usize;
    side.clamp(1, h.min(w))
}

/// Online and target parameters, optimizer and DINO center.
#[derive(Clone, Debug)]
pub struct PretextState {
    pub online: Tensors,
    /// EMA copy (BYOL projector branch or DINO teacher); empty for LiRA.
    pub target: Tensors,
    pub center: Array,
    optimizer: AdamW,
}

impl PretextState {
    pub fn init(cfg: &PretextConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.model.feature_width();
        let mut online = Model::init_trunk(&cfg.model, cfg.seed)?;
        let mut target = Tensors::new();
        match cfg.method {
            Method::Lira => {
                online.extend(init_gru("lira_gru", c, cfg.model.hidden, cfg.seed));
                online.extend(init_linear(
                    "lira_head",
                    cfg.model.hidden,
                    FEATURE_DIM,
                    cfg.seed,
                ));
            }
            Method::Byol => {
                online.extend(init_mlp(
                    "byol_proj",
                    c,
                    cfg.proj_hidden,
                    cfg.proj_dim,
                    cfg.seed,
                ));
                target = online.clone();
                online.extend(init_mlp(
                    "byol_pred",
                    cfg.proj_dim,
                    cfg.proj_hidden,
                    cfg.proj_dim,
                    cfg.seed,
                ));
            }
            Method::Dino => {
                online.extend(init_mlp(
                    "dino_head",
                    c,
                    cfg.proj_hidden,
                    cfg.proj_dim,
                    cfg.seed,
                ));
                target = online.clone();
            }
        }
        Ok(PretextState {
            online,
            target,
            center: Array::zeros(&[cfg.proj_dim]),
            optimizer: AdamW::new(cfg.lr, cfg.weight_decay),
        })
    }

    /// Online trunk tensors plus the input-size record, as saved to disk.
    pub fn trunk_checkpoint(&self, cfg: &PretextConfig) -> Tensors {
        let mut t: Tensors = self
            .online
            .iter()
            .filter(|(n, _)| is_trunk_param(n))
            .map(|(n, a)| (n.clone(), a.clone()))
            .collect();
        t.insert(
            INPUT_SIZE_KEY.into(),
            Array::scalar(cfg.model.input_size as f64),
        );
        t
    }

    /// DINO teacher logits for a normalized `[B, T, H, W]` batch.
    pub fn teacher_logits(&self, cfg: &PretextConfig, x: &Array) -> Result<Array> {
        if cfg.method != Method::Dino {
            return Err(Error::contract("teacher logits exist only for dino"));
        }
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.target, |_| false);
        let x = g.constant(x.clone());
        let e = embed(&mut g, &p, cfg, x)?;
        let out = mlp(&mut g, &p, "dino_head", e)?;
        Ok(g.value(out).clone())
    }

    /// One optimization step on a batch of `(clip id, segment)` pairs;
    /// returns the loss before the update.
    pub fn step(
        &mut self,
        cfg: &PretextConfig,
        batch: &[(u64, Segment)],
        epoch: usize,
        stats: &Stats,
    ) -> Result<f64> {
        let view = |id: u64, k: u64, clip: &Clip, side: usize, flip: bool| -> Result<Clip> {
            let mut r = rng::keyed(&[cfg.seed, purpose::VIEW, id, epoch as u64, k]);
            let c = apply_step(clip, &Step::RandomCrop { h: side, w: side }, &mut r)?;
            if flip {
                apply_step(&c, &Step::HorizontalFlip { p: 0.5 }, &mut r)
            } else {
                Ok(c)
            }
        };
        let views = |k: u64, side: usize| -> Result<Array> {
            let clips: Vec<Clip> = batch
                .iter()
                .map(|(id, s)| view(*id, k, &s.clip, side, true))
                .collect::<Result<_>>()?;
            stats.normalize(&clips.iter().collect::<Vec<_>>())
        };

        let mut g = Graph::new();
        let on = Bound::new(&mut g, &self.online, |_| true);
        let (h, w) = (batch[0].1.clip.height(), batch[0].1.clip.width());
        let mut new_center = None;
        let loss = match cfg.method {
            Method::Lira => {
                let s = cfg.model.input_size;
                let clips: Vec<Clip> = batch
                    .iter()
                    .map(|(_, seg)| seg.clip.center_crop(s, s))
                    .collect::<Result<_>>()?;
                let x = g.constant(stats.normalize(&clips.iter().collect::<Vec<_>>())?);
                let t = batch[0].1.clip.frames();
                let mut data = Vec::with_capacity(batch.len() * t * FEATURE_DIM);
                for (_, seg) in batch {
                    let f = seg
                        .features
                        .as_ref()
                        .ok_or_else(|| Error::config("lira pre-training needs feature streams"))?;
                    data.extend(f.data.iter().map(|&v| v as f64));
                }
                let target = Array::new(vec![batch.len(), t, FEATURE_DIM], data)?;
                let valid: Vec<usize> = batch.iter().map(|(_, s)| s.valid).collect();
                lira_loss(&mut g, &on, &cfg.model, x, &target, &valid)?
            }
            Method::Byol => {
                let side = cfg.model.input_size;
                let tg = Bound::new(&mut g, &self.target, |_| false);
                let xa = g.constant(views(0, side)?);
                let xb = g.constant(views(1, side)?);
                let branch = |g: &mut Graph, x: NodeId| -> Result<(NodeId, NodeId)> {
                    let e = embed(g, &on, cfg, x)?;
                    let z = mlp(g, &on, "byol_proj", e)?;
                    let q = mlp(g, &on, "byol_pred", z)?;
                    let et = embed(g, &tg, cfg, x)?;
                    Ok((q, mlp(g, &tg, "byol_proj", et)?))
                };
                let (qa, za) = branch(&mut g, xa)?;
                let (qb, zb) = branch(&mut g, xb)?;
                let l1 = byol_loss(&mut g, qa, zb)?;
                let l2 = byol_loss(&mut g, qb, za)?;
                g.add(l1, l2)?
            }
            Method::Dino => {
                let tg = Bound::new(&mut g, &self.target, |_| false);
                let global = crop_side(h, w, GLOBAL_CROP_AREA);
                let local = crop_side(h, w, LOCAL_CROP_AREA);
                let mut student = Vec::new();
                let mut teacher = Vec::new();
                for k in 0..4u64 {
                    let x = g.constant(views(k, if k < 2 { global } else { local })?);
                    let e = embed(&mut g, &on, cfg, x)?;
                    student.push(mlp(&mut g, &on, "dino_head", e)?);
                    if k < 2 {
                        let et = embed(&mut g, &tg, cfg, x)?;
                        let t = mlp(&mut g, &tg, "dino_head", et)?;
                        teacher.push(g.value(t).clone());
                    }
                }
                let (loss, c) = dino_loss(&mut g, &student, &teacher, &self.center, &cfg.dino())?;
                new_center = Some(c);
                loss
            }
        };
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = g.backward(loss)?;
        let grads: IndexMap<String, Array> = on
            .iter()
            .map(|(n, id)| {
                (
                    n.to_string(),
                    grads
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| Array::zeros(g.shape(id))),
                )
            })
            .collect();
        self.optimizer.step(&mut self.online, &grads)?;
        if !self.target.is_empty() {
            ema_update(&mut self.target, &self.online, cfg.ema)?;
        }
        if let (Some(c), true) = (new_center, cfg.centering) {
            self.center = c;
        }
        Ok(value)
    }
}

#[derive(Clone, Debug)]
pub struct PretextReport {
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
    pub state: PretextState,
}

/// Runs `cfg.method` over the train split of `manifest` and writes the trunk
/// checkpoint and `epoch,loss` log into `out_dir`.
pub fn pretrain(cfg: &PretextConfig, manifest: &Manifest, out_dir: &Path) -> Result<PretextReport> {
    let clips = manifest.load_split(Split::Train, cfg.method == Method::Lira)?;
    pretrain_clips(cfg, &clips, &manifest.stats, out_dir)
}

pub fn pretrain_clips(
    cfg: &PretextConfig,
    clips: &[LabeledClip],
    stats: &Stats,
    out_dir: &Path,
) -> Result<PretextReport> {
    let mut state = PretextState::init(cfg)?;
    if clips.is_empty() {
        return Err(Error::config("no training clips for pre-training"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let seg_len = clips
        .iter()
        .map(|c| c.clip.frames())
        .min()
        .unwrap_or(1)
        .min(cfg.segment);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut csv = String::from("epoch,loss\n");
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(clips.len(), &[cfg.seed, purpose::SHUFFLE, epoch as u64]);
        let mut sum = 0.0;
        let mut n = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<(u64, Segment)> = chunk
                .iter()
                .map(|&i| {
                    let c = &clips[i];
                    let mut r = rng::keyed(&[cfg.seed, purpose::SEGMENT, c.id, epoch as u64]);
                    sample_segment(c, seg_len, &mut r).map(|s| (c.id, s))
                })
                .collect::<Result<_>>()?;
            let loss = state.step(cfg, &batch, epoch, stats)?;
            if !loss.is_finite() {
                let dump = out_dir.join(format!("nonfinite_epoch{}_batch{bi}.txt", epoch + 1));
                let ids: Vec<String> = batch.iter().map(|(id, _)| id.to_string()).collect();
                let text = format!(
                    "method={}\nepoch={}\nbatch={bi}\nclips={}\nloss={loss}\n",
                    cfg.method,
                    epoch + 1,
                    ids.join(",")
                );
                std::fs::write(&dump, text).map_err(|e| Error::io(&dump, e))?;
                return Err(Error::NonFinite {
                    epoch: epoch + 1,
                    batch: bi,
                    dump,
                });
            }
            sum += loss;
            n += 1;
            log::debug!(
                "pretext {} epoch {} batch {bi}: loss {loss:.6}",
                cfg.method,
                epoch + 1
            );
        }
        let mean = sum / n as f64;
        log::info!("pretext {} epoch {}: loss {mean:.6}", cfg.method, epoch + 1);
        csv.push_str(&format!("{},{mean}\n", epoch + 1));
        losses.push(mean);
    }
    checkpoint::save(&out_dir.join(TRUNK_FILE), &state.trunk_checkpoint(cfg))?;
    let path = out_dir.join(LOSS_FILE);
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(PretextReport { losses, state })
}
