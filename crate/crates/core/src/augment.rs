//! Clip augmentations applied during downstream training.
//!
//! Each step draws from its own keyed stream (spec seed, clip id, epoch, step
//! index), so an augmented clip depends only on those values and never on
//! which other clips were processed before it.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv;
use crate::rng::{self, purpose};

/// Grayscale frame sequence `[T, H, W]`, 8-bit intensities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clip {
    t: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Clip {
    pub fn new(t: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "clip dimensions {t}x{h}x{w} must be positive"
            )));
        }
        if data.len() != t * h * w {
            return Err(Error::contract(format!(
                "clip {t}x{h}x{w} needs {} bytes, got {}",
                t * h * w,
                data.len()
            )));
        }
        Ok(Clip { t, h, w, data })
    }

    pub fn filled(t: usize, h: usize, w: usize, value: u8) -> Self {
        Clip::new(t, h, w, vec![value; t * h * w]).expect("positive dimensions")
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t, self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.h * self.w;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [u8] {
        let n = self.h * self.w;
        &mut self.data[i * n..(i + 1) * n]
    }

    /// `h × w` window at `(top, left)` of every frame.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Clip> {
        if h == 0 || w == 0 || top + h > self.h || left + w > self.w {
            return Err(Error::contract(format!(
                "crop {h}x{w} at ({top}, {left}) exceeds frame {}x{}",
                self.h, self.w
            )));
        }
        let mut data = Vec::with_capacity(self.t * h * w);
        for f in 0..self.t {
            let frame = self.frame(f);
            for r in top..top + h {
                data.extend_from_slice(&frame[r * self.w + left..r * self.w + left + w]);
            }
        }
        Clip::new(self.t, h, w, data)
    }

    /// Centered `h × w` window (offset rounded down).
    pub fn center_crop(&self, h: usize, w: usize) -> Result<Clip> {
        if h > self.h || w > self.w {
            return Err(Error::contract(format!(
                "center crop {h}x{w} larger than frame {}x{}",
                self.h, self.w
            )));
        }
        self.crop((self.h - h) / 2, (self.w - w) / 2, h, w)
    }

    /// Frames `start..start + len`.
    pub fn frames_range(&self, start: usize, len: usize) -> Result<Clip> {
        if len == 0 || start + len > self.t {
            return Err(Error::contract(format!(
                "frames [{start}, {}) of {}",
                start + len,
                self.t
            )));
        }
        let n = self.h * self.w;
        Clip::new(
            len,
            self.h,
            self.w,
            self.data[start * n..(start + len) * n].to_vec(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    HorizontalFlip {
        p: f64,
    },
    RandomCrop {
        h: usize,
        w: usize,
    },
    /// `side: None` means a quarter of the frame height at application time.
    CropOut {
        patches: usize,
        side: Option<usize>,
    },
    MissingFrames {
        fraction: f64,
    },
    Solarize {
        fraction: f64,
    },
    SaltPepper {
        amount: f64,
        salt_ratio: f64,
    },
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::HorizontalFlip { .. } => "hflip",
            Step::RandomCrop { .. } => "random_crop",
            Step::CropOut { .. } => "crop_out",
            Step::MissingFrames { .. } => "missing_frames",
            Step::Solarize { .. } => "solarize",
            Step::SaltPepper { .. } => "salt_pepper",
        }
    }

    fn parse(value: &str) -> Result<Step> {
        let (head, params) = kv::split_params(value);
        let get = |key: &str| -> Option<String> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
        };
        let f = |key: &str, v: Option<String>, default: f64| -> Result<f64> {
            v.map_or(Ok(default), |v| kv::parse_f64(key, &v))
        };
        let step = match head.as_str() {
            "hflip" => Step::HorizontalFlip { p: f("p", get("p"), 0.5)? },
            "random_crop" => {
                let need = |k: &str, v: Option<String>| {
                    v.ok_or_else(|| Error::config(format!("random_crop needs {k}")))
                        .and_then(|v| kv::parse_usize(k, &v))
                };
                Step::RandomCrop {
                    h: need("h", get("h"))?,
                    w: need("w", get("w"))?,
                }
            }
            "crop_out" => Step::CropOut {
                patches: get("patches").map_or(Ok(5), |v| kv::parse_usize("patches", &v))?,
                side: get("side").map(|v| kv::parse_usize("side", &v)).transpose()?,
            },
            "missing_frames" => Step::MissingFrames {
                fraction: f("fraction", get("fraction"), 0.2)?,
            },
            "solarize" => Step::Solarize {
                fraction: f("fraction", get("fraction"), 0.2)?,
            },
            "salt_pepper" => Step::SaltPepper {
                amount: f("amount", get("amount"), 0.02)?,
                salt_ratio: f("salt_ratio", get("salt_ratio"), 0.5)?,
            },
            other => {
                return Err(Error::config(format!(
                    "unknown augmentation {other:?} (hflip, random_crop, crop_out, missing_frames, solarize, salt_pepper)"
                )))
            }
        };
        let known: &[&str] = match &step {
            Step::HorizontalFlip { .. } => &["p"],
            Step::RandomCrop { .. } => &["h", "w"],
            Step::CropOut { .. } => &["patches", "side"],
            Step::MissingFrames { .. } | Step::Solarize { .. } => &["fraction"],
            Step::SaltPepper { .. } => &["amount", "salt_ratio"],
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            return Err(Error::config(format!("{head}: unknown parameter {k:?}")));
        }
        step.validate()?;
        Ok(step)
    }

    fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{}: {name}={v} outside [0, 1]",
                    self.name()
                )))
            }
        };
        match *self {
            Step::HorizontalFlip { p } => unit("p", p),
            Step::RandomCrop { h, w } if h == 0 || w == 0 => {
                Err(Error::config("random_crop size must be positive"))
            }
            Step::RandomCrop { .. } => Ok(()),
            Step::CropOut { side: Some(0), .. } => {
                Err(Error::config("crop_out side must be positive"))
            }
            Step::CropOut { .. } => Ok(()),
            Step::MissingFrames { fraction } | Step::Solarize { fraction } => {
                unit("fraction", fraction)
            }
            Step::SaltPepper { amount, salt_ratio } => {
                unit("amount", amount).and(unit("salt_ratio", salt_ratio))
            }
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        match self {
            Step::HorizontalFlip { p } => write!(f, ",p={p}"),
            Step::RandomCrop { h, w } => write!(f, ",h={h},w={w}"),
            Step::CropOut { patches, side } => {
                write!(f, ",patches={patches}")?;
                match side {
                    Some(s) => write!(f, ",side={s}"),
                    None => Ok(()),
                }
            }
            Step::MissingFrames { fraction } | Step::Solarize { fraction } => {
                write!(f, ",fraction={fraction}")
            }
            Step::SaltPepper { amount, salt_ratio } => {
                write!(f, ",amount={amount},salt_ratio={salt_ratio}")
            }
        }
    }
}

/// Ordered augmentation steps and the seed their randomness is keyed on.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AugmentationSpec {
    pub steps: Vec<Step>,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = AugmentationSpec::none();
        for e in kv::parse(text).map_err(Error::config)? {
            match e.key.as_str() {
                "seed" => spec.seed = kv::parse_u64("seed", &e.value)?,
                "step" => spec.steps.push(Step::parse(&e.value)?),
                other => {
                    return Err(Error::config(format!(
                        "line {}: unknown key {other:?}",
                        e.line
                    )))
                }
            }
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(d) => Error::format("augmentation spec", path, d),
            other => other,
        })
    }

    /// Same steps, randomness keyed on `seed` instead.
    pub fn with_seed(&self, seed: u64) -> Self {
        AugmentationSpec {
            steps: self.steps.clone(),
            seed,
        }
    }

    /// Checks crop sizes against `h × w` input frames.
    pub fn validate_for(&self, h: usize, w: usize) -> Result<()> {
        let (mut h, mut w) = (h, w);
        for s in &self.steps {
            if let Step::RandomCrop { h: ch, w: cw } = *s {
                if ch > h || cw > w {
                    return Err(Error::contract(format!(
                        "random_crop {ch}x{cw} larger than frame {h}x{w}"
                    )));
                }
                (h, w) = (ch, cw);
            }
        }
        Ok(())
    }

    /// Frame size after all crops, for `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.steps.iter().fold((h, w), |acc, s| match *s {
            Step::RandomCrop { h, w } => (h, w),
            _ => acc,
        })
    }

    fn step_rng(&self, clip_id: u64, epoch: u64, step: usize) -> ChaCha8Rng {
        rng::keyed(&[self.seed, purpose::AUGMENT, clip_id, epoch, step as u64])
    }

    pub fn apply(&self, clip: &Clip, clip_id: u64, epoch: u64) -> Result<Clip> {
        let mut out = clip.clone();
        for (i, step) in self.steps.iter().enumerate() {
            out = apply_step(&out, step, &mut self.step_rng(clip_id, epoch, i))?;
        }
        Ok(out)
    }
}

impl fmt::Display for AugmentationSpec {
    /// The spec file text (parses back to an equal spec).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed={}", self.seed)?;
        for s in &self.steps {
            writeln!(f, "step={s}")?;
        }
        Ok(())
    }
}

fn flip(clip: &mut Clip) {
    let w = clip.w;
    for row in clip.data.chunks_mut(w) {
        row.reverse();
    }
}

fn count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).floor() as usize).min(n)
}

/// Applies one step with the given stream.
pub fn apply_step(clip: &Clip, step: &Step, rng: &mut ChaCha8Rng) -> Result<Clip> {
    let mut out = clip.clone();
    let (t, h, w) = clip.dims();
    match *step {
        Step::HorizontalFlip { p } => {
            if rng::unit(rng) < p {
                flip(&mut out);
            }
        }
        Step::RandomCrop { h: ch, w: cw } => {
            if ch > h || cw > w {
                return Err(Error::contract(format!(
                    "random_crop {ch}x{cw} larger than frame {h}x{w}"
                )));
            }
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            out = clip.crop(top, left, ch, cw)?;
        }
        Step::CropOut { patches, side } => {
            let side = side.unwrap_or(h / 4).min(h).min(w);
            if side > 0 {
                let spots: Vec<(usize, usize)> = (0..patches)
                    .map(|_| {
                        (
                            rng.random_range(0..=h - side),
                            rng.random_range(0..=w - side),
                        )
                    })
                    .collect();
                for f in 0..t {
                    let frame = out.frame_mut(f);
                    for &(top, left) in &spots {
                        for r in top..top + side {
                            frame[r * w + left..r * w + left + side].fill(0);
                        }
                    }
                }
            }
        }
        Step::MissingFrames { fraction } => {
            for f in index::sample(rng, t, count(fraction, t)) {
                out.frame_mut(f).fill(0);
            }
        }
        Step::Solarize { fraction } => {
            for f in index::sample(rng, t, count(fraction, t)) {
                let frame = out.frame_mut(f);
                let mean = frame.iter().map(|&v| v as f64).sum::<f64>() / frame.len() as f64;
                for v in frame.iter_mut() {
                    if *v as f64 > mean {
                        *v = 255 - *v;
                    }
                }
            }
        }
        Step::SaltPepper { amount, salt_ratio } => {
            let total = t * h * w;
            let n = ((amount * total as f64).round() as usize).min(total);
            for i in index::sample(rng, total, n) {
                out.data[i] = if rng::unit(rng) < salt_ratio { 255 } else { 0 };
            }
        }
    }
    Ok(out)
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "P5\n{width} {height}\n255\n")
        .and_then(|_| f.write_all(pixels))
        .map_err(|e| Error::io(path, e))
}

/// Up to `max_frames` evenly spaced frames tiled left to right.
fn strip(clip: &Clip, max_frames: usize) -> (usize, usize, Vec<u8>) {
    let (t, h, w) = clip.dims();
    let n = t.min(max_frames).max(1);
    let picks: Vec<usize> = (0..n).map(|i| i * t / n).collect();
    let width = n * w;
    let mut px = vec![0u8; width * h];
    for (k, &f) in picks.iter().enumerate() {
        let frame = clip.frame(f);
        for r in 0..h {
            px[r * width + k * w..r * width + (k + 1) * w]
                .copy_from_slice(&frame[r * w..(r + 1) * w]);
        }
    }
    (width, h, px)
}

/// Frames shown per preview image.
pub const PREVIEW_FRAMES: usize = 8;

/// Writes the clip before augmentation and after each step, as PGM strips.
pub fn preview(
    clip: &Clip,
    spec: &AugmentationSpec,
    out_dir: &Path,
    clip_id: u64,
    epoch: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(spec.steps.len() + 1);
    let mut save = |name: String, c: &Clip| -> Result<()> {
        let path = out_dir.join(name);
        let (w, h, px) = strip(c, PREVIEW_FRAMES);
        write_pgm(&path, w, h, &px)?;
        paths.push(path);
        Ok(())
    };
    save("00_original.pgm".into(), clip)?;
    let mut current = clip.clone();
    for (i, step) in spec.steps.iter().enumerate() {
        current = apply_step(&current, step, &mut spec.step_rng(clip_id, epoch, i))?;
        save(format!("{:02}_{}.pgm", i + 1, step.name()), &current)?;
    }
    Ok(paths)
}
