//! Downstream network: 3-D convolutional frontend, residual trunk applied per
//! frame, spatial average pooling, GRU over time, and two per-frame heads
//! (bounded regression and per-dimension class logits).
//!
//! Parameters live in an ordered name → [`Array`] map. Names fix the group a
//! tensor belongs to: `frontend.*` and `stage*` form the trunk that pretext
//! training produces and [`Model::transfer_trunk`] copies; `gru*` and
//! `*_head.*` are the task heads.

pub mod checkpoint;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::RngExt;

use crate::diffcore::{Array, Graph, NodeId};
use crate::error::{Error, Result};
use crate::labels::DEFAULT_BINS;
use crate::rng::{self, purpose};
pub use checkpoint::Tensors;

pub const FRONTEND_KERNEL: [usize; 3] = [5, 7, 7];
pub const FRONTEND_STRIDE: [usize; 3] = [1, 2, 2];
pub const FRONTEND_PAD: [usize; 3] = [2, 3, 3];
/// Checkpoint record holding the configured input frame size.
pub const INPUT_SIZE_KEY: &str = "meta.input_size";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Side of the square input frames.
    pub input_size: usize,
    /// Channel width of each residual stage; the frontend emits `widths[0]`.
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub num_bins: usize,
    pub bidirectional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 48,
            widths: vec![8, 16, 32, 64],
            hidden: 64,
            num_bins: DEFAULT_BINS,
            bidirectional: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("stage widths must be non-empty and positive"));
        }
        if self.hidden == 0 || self.num_bins < 2 {
            return Err(Error::config(
                "hidden size must be positive and bins at least 2",
            ));
        }
        if self.input_size < 2 {
            return Err(Error::config("input size must be at least 2"));
        }
        Ok(())
    }

    /// Stride of stage `i` (0-based): the first keeps resolution, later ones halve it.
    fn stage_stride(i: usize) -> usize {
        if i == 0 {
            1
        } else {
            2
        }
    }

    fn stage_has_projection(&self, i: usize) -> bool {
        let c_in = if i == 0 {
            self.widths[0]
        } else {
            self.widths[i - 1]
        };
        Self::stage_stride(i) != 1 || c_in != self.widths[i]
    }

    pub fn feature_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    /// Width of the recurrent output fed to the heads.
    pub fn recurrent_width(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// `U(±sqrt(6 / fan_in))`, variance `2 / fan_in`.
    Kaiming(usize),
    /// `U(±1 / sqrt(hidden))`.
    Recurrent(usize),
    Zeros,
    Ones,
}

type Spec = Vec<(String, Vec<usize>, Init)>;

fn trunk_spec(cfg: &ModelConfig) -> Spec {
    let w0 = cfg.widths[0];
    let fan = FRONTEND_KERNEL.iter().product::<usize>();
    let mut s: Spec = vec![
        (
            "frontend.conv.weight".into(),
            vec![w0, 1, 5, 7, 7],
            Init::Kaiming(fan),
        ),
        ("frontend.affine.scale".into(), vec![w0], Init::Ones),
        ("frontend.affine.shift".into(), vec![w0], Init::Zeros),
    ];
    for (i, &c) in cfg.widths.iter().enumerate() {
        let c_in = if i == 0 { w0 } else { cfg.widths[i - 1] };
        let p = format!("stage{}", i + 1);
        s.push((
            format!("{p}.conv1.weight"),
            vec![c, c_in, 3, 3],
            Init::Kaiming(c_in * 9),
        ));
        s.push((format!("{p}.affine1.scale"), vec![c], Init::Ones));
        s.push((format!("{p}.affine1.shift"), vec![c], Init::Zeros));
        s.push((
            format!("{p}.conv2.weight"),
            vec![c, c, 3, 3],
            Init::Kaiming(c * 9),
        ));
        s.push((format!("{p}.affine2.scale"), vec![c], Init::Ones));
        s.push((format!("{p}.affine2.shift"), vec![c], Init::Zeros));
        if cfg.stage_has_projection(i) {
            s.push((
                format!("{p}.shortcut.weight"),
                vec![c, c_in, 1, 1],
                Init::Kaiming(c_in),
            ));
        }
    }
    s
}

/// GRU tensors under `prefix`; gate blocks ordered reset, update, candidate.
fn gru_spec(prefix: &str, input: usize, hidden: usize) -> Spec {
    vec![
        (
            format!("{prefix}.w_ih"),
            vec![input, 3 * hidden],
            Init::Recurrent(hidden),
        ),
        (
            format!("{prefix}.w_hh"),
            vec![hidden, 3 * hidden],
            Init::Recurrent(hidden),
        ),
        (format!("{prefix}.b_ih"), vec![3 * hidden], Init::Zeros),
        (format!("{prefix}.b_hh"), vec![3 * hidden], Init::Zeros),
    ]
}

fn linear_spec(prefix: &str, input: usize, output: usize) -> Spec {
    vec![
        (
            format!("{prefix}.weight"),
            vec![input, output],
            Init::Kaiming(input),
        ),
        (format!("{prefix}.bias"), vec![output], Init::Zeros),
    ]
}

fn full_spec(cfg: &ModelConfig) -> Spec {
    let mut s = trunk_spec(cfg);
    s.extend(gru_spec("gru", cfg.feature_width(), cfg.hidden));
    if cfg.bidirectional {
        s.extend(gru_spec("gru_rev", cfg.feature_width(), cfg.hidden));
    }
    s.extend(linear_spec("reg_head", cfg.recurrent_width(), 2));
    s.extend(linear_spec(
        "cls_head",
        cfg.recurrent_width(),
        2 * cfg.num_bins,
    ));
    s
}

fn name_key(name: &str) -> u64 {
    let parts: Vec<u64> = name.bytes().map(u64::from).collect();
    rng::derive_seed(&parts)
}

fn materialize(spec: Spec, seed: u64) -> Tensors {
    spec.into_iter()
        .map(|(name, shape, init)| {
            let mut r = rng::keyed(&[seed, purpose::INIT, name_key(&name)]);
            let a = match init {
                Init::Zeros => Array::zeros(&shape),
                Init::Ones => Array::full(&shape, 1.0),
                Init::Kaiming(fan_in) => {
                    let b = libm::sqrt(6.0 / fan_in as f64);
                    Array::from_fn(&shape, |_| r.random_range(-b..b))
                }
                Init::Recurrent(h) => {
                    let b = 1.0 / libm::sqrt(h as f64);
                    Array::from_fn(&shape, |_| r.random_range(-b..b))
                }
            };
            (name, a)
        })
        .collect()
}

/// Freshly initialized tensors for `spec`-style extra modules (pretext heads).
pub(crate) fn init_linear(prefix: &str, input: usize, output: usize, seed: u64) -> Tensors {
    materialize(linear_spec(prefix, input, output), seed)
}

pub(crate) fn init_gru(prefix: &str, input: usize, hidden: usize, seed: u64) -> Tensors {
    materialize(gru_spec(prefix, input, hidden), seed)
}

pub fn is_frontend_param(name: &str) -> bool {
    name.starts_with("frontend.")
}

pub fn is_trunk_param(name: &str) -> bool {
    is_frontend_param(name) || name.starts_with("stage")
}

/// Which parameter group is excluded from training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Freeze {
    #[default]
    None,
    /// The first 3-D convolution and its affine.
    Frontend,
    /// Frontend and all residual stages.
    Trunk,
}

impl Freeze {
    pub fn is_frozen(self, name: &str) -> bool {
        match self {
            Freeze::None => false,
            Freeze::Frontend => is_frontend_param(name),
            Freeze::Trunk => is_trunk_param(name),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Freeze::None => "none",
            Freeze::Frontend => "frontend",
            Freeze::Trunk => "trunk",
        }
    }
}

impl fmt::Display for Freeze {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Freeze {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Freeze::None),
            "frontend" => Ok(Freeze::Frontend),
            "trunk" => Ok(Freeze::Trunk),
            _ => Err(Error::config(format!(
                "unknown freeze mode {s:?} (none, frontend, trunk)"
            ))),
        }
    }
}

/// Parameters placed on a graph, by name.
#[derive(Debug, Default, Clone)]
pub struct Bound {
    ids: IndexMap<String, NodeId>,
}

impl Bound {
    /// Places every tensor on `g`, as a leaf when `trainable(name)` holds and
    /// as a constant otherwise.
    pub fn new(g: &mut Graph, tensors: &Tensors, trainable: impl Fn(&str) -> bool) -> Self {
        let ids = tensors
            .iter()
            .map(|(n, a)| {
                let id = if trainable(n) {
                    g.leaf(a.clone())
                } else {
                    g.constant(a.clone())
                };
                (n.clone(), id)
            })
            .collect();
        Bound { ids }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(n, &id)| (n.as_str(), id))
    }

    pub fn extend(&mut self, other: Bound) {
        self.ids.extend(other.ids);
    }
}

/// `x · W + b` for `x` of shape `[N, in]`.
pub fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let y = g.matmul(x, p.get(&format!("{prefix}.weight"))?)?;
    g.affine(y, None, Some(p.get(&format!("{prefix}.bias"))?), 1)
}

fn affine_relu(g: &mut Graph, p: &Bound, prefix: &str, x: NodeId, relu: bool) -> Result<NodeId> {
    let y = g.affine(
        x,
        Some(p.get(&format!("{prefix}.scale"))?),
        Some(p.get(&format!("{prefix}.shift"))?),
        1,
    )?;
    Ok(if relu { g.relu(y) } else { y })
}

/// Per-frame pooled trunk features `[B, T, C]` for input frames `[B, T, H, W]`.
/// Pooling makes the trunk accept any frame size; [`Model::forward`] enforces
/// the configured one.
pub fn trunk_forward(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: NodeId) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::contract(format!(
            "trunk input {s:?}, expected [B, T, H, W]"
        )));
    }
    let (b, t) = (s[0], s[1]);
    let x = g.reshape(x, &[b, 1, t, s[2], s[3]])?;
    let y = g.conv3d(
        x,
        p.get("frontend.conv.weight")?,
        FRONTEND_STRIDE,
        FRONTEND_PAD,
    )?;
    let y = affine_relu(g, p, "frontend.affine", y, true)?;
    let ys = g.shape(y).to_vec();
    let y = g.permute(y, &[0, 2, 1, 3, 4])?;
    let mut y = g.reshape(y, &[b * t, ys[1], ys[3], ys[4]])?;

    for i in 0..cfg.widths.len() {
        let pre = format!("stage{}", i + 1);
        let st = ModelConfig::stage_stride(i);
        let h = g.conv2d(y, p.get(&format!("{pre}.conv1.weight"))?, [st, st], [1, 1])?;
        let h = affine_relu(g, p, &format!("{pre}.affine1"), h, true)?;
        let h = g.conv2d(h, p.get(&format!("{pre}.conv2.weight"))?, [1, 1], [1, 1])?;
        let h = affine_relu(g, p, &format!("{pre}.affine2"), h, false)?;
        let shortcut = if cfg.stage_has_projection(i) {
            g.conv2d(
                y,
                p.get(&format!("{pre}.shortcut.weight"))?,
                [st, st],
                [0, 0],
            )?
        } else {
            y
        };
        let sum = g.add(h, shortcut)?;
        y = g.relu(sum);
    }
    let pooled = g.mean_axis(y, 3)?;
    let pooled = g.mean_axis(pooled, 2)?;
    g.reshape(pooled, &[b, t, cfg.feature_width()])
}

/// GRU over `[B, T, C]`, returning hidden states `[B, T, H]` in time order.
/// The state starts at zero; `reverse` runs from the last frame backwards.
pub fn gru_forward(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x: NodeId,
    hidden: usize,
    reverse: bool,
) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let (b, t, c) = (s[0], s[1], s[2]);
    let w_ih = p.get(&format!("{prefix}.w_ih"))?;
    let w_hh = p.get(&format!("{prefix}.w_hh"))?;
    let b_ih = p.get(&format!("{prefix}.b_ih"))?;
    let b_hh = p.get(&format!("{prefix}.b_hh"))?;

    let flat = g.reshape(x, &[b * t, c])?;
    let proj = g.matmul(flat, w_ih)?;
    let proj = g.affine(proj, None, Some(b_ih), 1)?;
    let proj = g.reshape(proj, &[b, t, 3 * hidden])?;

    let mut h = g.constant(Array::zeros(&[b, hidden]));
    let mut states = vec![None; t];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t).rev())
    } else {
        Box::new(0..t)
    };
    for step in order {
        let xt = g.slice(proj, 1, step, 1)?;
        let xt = g.reshape(xt, &[b, 3 * hidden])?;
        let gh = g.matmul(h, w_hh)?;
        let gh = g.affine(gh, None, Some(b_hh), 1)?;
        let part = |g: &mut Graph, n: NodeId, k: usize| g.slice(n, 1, k * hidden, hidden);
        let (xr, xz, xn) = (part(g, xt, 0)?, part(g, xt, 1)?, part(g, xt, 2)?);
        let (hr, hz, hn) = (part(g, gh, 0)?, part(g, gh, 1)?, part(g, gh, 2)?);
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n);
        let d = g.sub(h, n)?;
        let zd = g.mul(z, d)?;
        h = g.add(n, zd)?;
        states[step] = Some(g.reshape(h, &[b, 1, hidden])?);
    }
    let states: Vec<NodeId> = states
        .into_iter()
        .map(|s| s.expect("every step visited"))
        .collect();
    g.concat(&states, 1)
}

/// Per-frame network outputs.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[B, T, 2]` in (−1, 1); index 0 arousal, 1 valence.
    pub reg: NodeId,
    /// `[B, T, 2, L]`.
    pub logits: NodeId,
    /// `[B, T, H]` (or `2H` when bidirectional).
    pub features: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Tensors,
}

impl Model {
    /// Kaiming-uniform convolutions and linears, uniform recurrent weights,
    /// zero biases and shifts, unit scales. Deterministic per seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let params = materialize(full_spec(&config), seed);
        Ok(Model { config, params })
    }

    /// Trunk tensors only, initialized as in [`Model::init`].
    pub fn init_trunk(config: &ModelConfig, seed: u64) -> Result<Tensors> {
        config.validate()?;
        Ok(materialize(trunk_spec(config), seed))
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }

    pub fn trunk(&self) -> Tensors {
        self.params
            .iter()
            .filter(|(n, _)| is_trunk_param(n))
            .map(|(n, a)| (n.clone(), a.clone()))
            .collect()
    }

    pub fn to_tensors(&self) -> Tensors {
        let mut t = self.params.clone();
        t.insert(
            INPUT_SIZE_KEY.into(),
            Array::scalar(self.config.input_size as f64),
        );
        t
    }

    /// Rebuilds a model from checkpoint tensors, inferring the configuration
    /// from tensor shapes.
    pub fn from_tensors(mut t: Tensors) -> Result<Model> {
        let input_size = match t.shift_remove(INPUT_SIZE_KEY) {
            Some(a) => a.item()? as usize,
            None => ModelConfig::default().input_size,
        };
        let config = infer_config(&t, input_size)?;
        let expected = full_spec(&config);
        check_shapes(&t, &expected)?;
        let params = expected
            .into_iter()
            .map(|(n, _, _)| {
                let a = t.shift_remove(&n).expect("checked");
                (n, a)
            })
            .collect();
        Ok(Model { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_tensors(checkpoint::load(path)?)
    }

    /// Copies every trunk tensor from `source` (a pretext checkpoint or
    /// another model); heads are left untouched.
    pub fn transfer_trunk(&mut self, source: &Tensors) -> Result<()> {
        for (name, a) in source.iter().filter(|(n, _)| is_trunk_param(n)) {
            if !self.params.contains_key(name) {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{name}: present in source, absent from target trunk"
                )));
            }
            if self.params[name].shape() != a.shape() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{name}: source shape {:?}, target shape {:?}",
                    a.shape(),
                    self.params[name].shape()
                )));
            }
        }
        for name in self.params.keys().filter(|n| is_trunk_param(n)) {
            if !source.contains_key(name) {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{name}: missing from source"
                )));
            }
        }
        for (name, a) in source.iter().filter(|(n, _)| is_trunk_param(n)) {
            self.params[name] = a.clone();
        }
        Ok(())
    }

    /// Places parameters on `g`; frozen ones become constants.
    pub fn bind(&self, g: &mut Graph, freeze: Freeze) -> Bound {
        Bound::new(g, &self.params, |n| !freeze.is_frozen(n))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<Outputs> {
        let cfg = &self.config;
        let s = g.shape(x);
        if s.len() != 4 || s[2] != cfg.input_size || s[3] != cfg.input_size {
            return Err(Error::contract(format!(
                "model input {s:?}, expected [B, T, {0}, {0}]",
                cfg.input_size
            )));
        }
        let feats = trunk_forward(g, p, cfg, x)?;
        let (b, t) = (g.shape(feats)[0], g.shape(feats)[1]);
        let mut rec = gru_forward(g, p, "gru", feats, cfg.hidden, false)?;
        if cfg.bidirectional {
            let back = gru_forward(g, p, "gru_rev", feats, cfg.hidden, true)?;
            rec = g.concat(&[rec, back], 2)?;
        }
        let width = cfg.recurrent_width();
        let flat = g.reshape(rec, &[b * t, width])?;
        let reg = linear(g, p, "reg_head", flat)?;
        let reg = g.tanh(reg);
        let reg = g.reshape(reg, &[b, t, 2])?;
        let logits = linear(g, p, "cls_head", flat)?;
        let logits = g.reshape(logits, &[b, t, 2, cfg.num_bins])?;
        Ok(Outputs {
            reg,
            logits,
            features: rec,
        })
    }

    /// Inference on one normalized clip `[T, S, S]`; returns `[T, 2]` regression output.
    pub fn predict(&self, frames: &Array) -> Result<Array> {
        let s = frames.shape();
        if s.len() != 3 {
            return Err(Error::contract(format!(
                "predict expects [T, S, S], got {s:?}"
            )));
        }
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, |_| false);
        let x = g.constant(frames.clone().reshape(&[1, s[0], s[1], s[2]])?);
        let out = self.forward(&mut g, &p, x)?;
        g.value(out.reg).clone().reshape(&[s[0], 2])
    }

    /// One line per tensor plus the total, for `describe`.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (n, a) in &self.params {
            s.push_str(&format!(
                "{n:<24} {:>16} {:>8}\n",
                format!("{:?}", a.shape()),
                a.len()
            ));
        }
        s.push_str(&format!("total parameters: {}\n", self.param_count()));
        s
    }
}

fn shape_of<'a>(t: &'a Tensors, name: &str) -> Result<&'a [usize]> {
    t.get(name)
        .map(Array::shape)
        .ok_or_else(|| Error::IncompatibleCheckpoint(format!("{name}: missing")))
}

fn infer_config(t: &Tensors, input_size: usize) -> Result<ModelConfig> {
    let bad = |m: String| Error::IncompatibleCheckpoint(m);
    let front = shape_of(t, "frontend.conv.weight")?;
    if front.len() != 5 || front[1] != 1 || front[2..] != FRONTEND_KERNEL {
        return Err(bad(format!(
            "frontend.conv.weight: unexpected shape {front:?}"
        )));
    }
    let mut widths = Vec::new();
    while let Some(a) = t.get(&format!("stage{}.conv1.weight", widths.len() + 1)) {
        widths.push(a.shape()[0]);
    }
    if widths.is_empty() {
        return Err(bad("no residual stages".into()));
    }
    if widths[0] != front[0] {
        return Err(bad(format!(
            "stage1.conv1.weight: {} output channels, frontend has {}",
            widths[0], front[0]
        )));
    }
    let hidden = shape_of(t, "gru.w_hh")?[0];
    let bins = shape_of(t, "cls_head.bias")?[0] / 2;
    Ok(ModelConfig {
        input_size,
        widths,
        hidden,
        num_bins: bins,
        bidirectional: t.contains_key("gru_rev.w_hh"),
    })
}

fn check_shapes(t: &Tensors, expected: &Spec) -> Result<()> {
    for (name, shape, _) in expected {
        let got = shape_of(t, name)?;
        if got != shape.as_slice() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{name}: shape {got:?}, expected {shape:?}"
            )));
        }
    }
    if let Some(extra) = t.keys().find(|k| !expected.iter().any(|(n, _, _)| n == *k)) {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{extra}: unexpected tensor"
        )));
    }
    Ok(())
}

/// Trunk-only configuration check between two tensor maps; names the first
/// differing tensor.
pub fn check_trunk_compatible(a: &Tensors, b: &Tensors) -> Result<()> {
    let ta: Vec<(&String, &Array)> = a.iter().filter(|(n, _)| is_trunk_param(n)).collect();
    let tb: Vec<(&String, &Array)> = b.iter().filter(|(n, _)| is_trunk_param(n)).collect();
    for i in 0..ta.len().max(tb.len()) {
        match (ta.get(i), tb.get(i)) {
            (Some((na, xa)), Some((nb, xb))) if na == nb && xa.shape() == xb.shape() => {}
            (Some((na, xa)), Some((_, xb))) => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{na}: shape {:?} vs {:?}",
                    xa.shape(),
                    xb.shape()
                )))
            }
            (Some((n, _)), None) | (None, Some((n, _))) => {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{n}: present on one side only"
                )))
            }
            (None, None) => unreachable!(),
        }
    }
    Ok(())
}
