//! Synthetic labeled clips, their binary file formats, dataset manifests,
//! segment sampling and normalization statistics.
//!
//! A clip shows a bright ellipse on a dark background. Arousal drives the
//! ellipse intensity and valence its horizontal position, so both labels are
//! recoverable from the pixels. Each clip also carries an 8-dimensional
//! feature stream, a fixed nonlinear function of the labels, used as the
//! regression target of the LiRA-style pretext task.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::Clip;
use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::labels::AffectSeries;
use crate::rng::{self, purpose};

const CLIP_MAGIC: &[u8; 4] = b"SSVA";
const CLIP_VERSION: u32 = 1;
const FEATURE_MAGIC: &[u8; 4] = b"SSVF";
pub const FEATURE_DIM: usize = 8;
pub const MANIFEST_NAME: &str = "manifest";

const BACKGROUND: f64 = 20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub noise_std: f64,
    /// Standard deviation of the random-walk step.
    pub walk_sigma: f64,
    /// Moving-average window applied to the walk.
    pub smooth_window: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_clips: 56,
            frames: 120,
            height: 64,
            width: 64,
            seed: 7,
            noise_std: 8.0,
            walk_sigma: 0.1,
            smooth_window: 9,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clips == 0 || self.frames == 0 {
            return Err(Error::config(
                "need at least one clip of at least one frame",
            ));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config("frames must be at least 8x8"));
        }
        if !(self.noise_std >= 0.0 && self.walk_sigma >= 0.0) {
            return Err(Error::config(
                "noise and walk deviations must be non-negative",
            ));
        }
        if self.smooth_window == 0 {
            return Err(Error::config("smoothing window must be positive"));
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(0.0..=1.0).contains(&v) || !(0.0..=1.0).contains(&t) || v + t > 1.0 {
            return Err(Error::config(
                "split fractions must lie in [0, 1] and sum to at most 1",
            ));
        }
        Ok(())
    }

    /// `(train, val, test)` clip counts: floor allocation, remainder to train.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.num_clips;
        let val = (self.val_fraction * n as f64).floor() as usize;
        let test = (self.test_fraction * n as f64).floor() as usize;
        (n - val - test, val, test)
    }
}

/// Smoothed Gaussian random walk in `[−1, 1]`.
pub fn trajectory(rng: &mut ChaCha8Rng, frames: usize, sigma: f64, window: usize) -> Vec<f64> {
    let mut walk = Vec::with_capacity(frames);
    let mut x = rng.random_range(-0.6..0.6);
    for _ in 0..frames {
        walk.push(x);
        x += sigma * rng::gaussian(rng);
    }
    let half = window / 2;
    let at = |i: isize| walk[i.clamp(0, frames as isize - 1) as usize];
    (0..frames as isize)
        .map(|i| {
            let lo = i - half as isize;
            let s: f64 = (lo..lo + window as isize).map(at).sum();
            (s / window as f64).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Noise-free intensity of pixel `(row, col)` for labels `(arousal, valence)`.
pub fn blob_intensity(
    arousal: f64,
    valence: f64,
    row: usize,
    col: usize,
    h: usize,
    w: usize,
) -> f64 {
    let peak = 128.0 + 100.0 * arousal;
    let (rx, ry) = (0.18 * w as f64, 0.25 * h as f64);
    let cx = (w as f64 - 1.0) / 2.0 + valence * 0.15 * w as f64;
    let cy = (h as f64 - 1.0) / 2.0;
    let (dx, dy) = ((col as f64 - cx) / rx, (row as f64 - cy) / ry);
    let r = libm::sqrt(dx * dx + dy * dy);
    let coverage = ((1.0 - r) * rx + 0.5).clamp(0.0, 1.0);
    BACKGROUND + (peak - BACKGROUND) * coverage
}

/// Renders one `h × w` frame with additive Gaussian pixel noise.
pub fn render_frame(
    arousal: f64,
    valence: f64,
    h: usize,
    w: usize,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let mut px = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let mut v = blob_intensity(arousal, valence, row, col, h, w);
            if noise_std > 0.0 {
                v += noise_std * rng::gaussian(rng);
            }
            px.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    px
}

/// Coefficients `(A, B, C, E, P)` of `f_d = A_d v + B_d a + sin(C_d v + E_d a + P_d)`.
fn feature_coefficients() -> [[f64; 5]; FEATURE_DIM] {
    let mut r = rng::keyed(&[purpose::GENERATE, 0xFEA7]);
    let mut c = [[0.0; 5]; FEATURE_DIM];
    for row in &mut c {
        *row = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-3.0..3.0),
            r.random_range(-3.0..3.0),
            r.random_range(0.0..std::f64::consts::TAU),
        ];
    }
    c
}

/// Per-frame synthetic target vectors, `[T, D]` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStream {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureStream {
    pub fn from_labels(labels: &AffectSeries) -> Self {
        let coef = feature_coefficients();
        let mut data = Vec::with_capacity(labels.len() * FEATURE_DIM);
        for (&v, &a) in labels.valence.iter().zip(&labels.arousal) {
            for [ca, cb, cc, ce, cp] in coef {
                data.push((ca * v + cb * a + libm::sin(cc * v + ce * a + cp)) as f32);
            }
        }
        FeatureStream {
            frames: labels.len(),
            dim: FEATURE_DIM,
            data,
        }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

pub fn write_clip(path: &Path, clip: &Clip) -> Result<()> {
    let (t, h, w) = clip.dims();
    let mut bytes = Vec::with_capacity(20 + clip.data().len());
    bytes.extend_from_slice(CLIP_MAGIC);
    for v in [CLIP_VERSION, t as u32, h as u32, w as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(clip.data());
    write_file(path, &bytes)
}

pub fn read_clip(path: &Path) -> Result<Clip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("clip", path, d);
    if bytes.get(..4) != Some(CLIP_MAGIC) {
        return Err(bad("missing SSVA magic"));
    }
    let version = read_u32(&bytes, 4).ok_or_else(|| bad("truncated header"))?;
    if version != CLIP_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| read_u32(&bytes, 8 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| bad("truncated header"))?;
    let body = &bytes[20..];
    if body.len() != dims[0] * dims[1] * dims[2] {
        return Err(bad(&format!(
            "expected {} pixel bytes, found {}",
            dims[0] * dims[1] * dims[2],
            body.len()
        )));
    }
    Clip::new(dims[0], dims[1], dims[2], body.to_vec()).map_err(|e| bad(&e.to_string()))
}

pub fn write_features(path: &Path, f: &FeatureStream) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + 4 * f.data.len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(f.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(f.dim as u32).to_le_bytes());
    for v in &f.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn read_features(path: &Path) -> Result<FeatureStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("feature stream", path, d);
    if bytes.get(..4) != Some(FEATURE_MAGIC) {
        return Err(bad("missing SSVF magic"));
    }
    let (t, d) = match (read_u32(&bytes, 4), read_u32(&bytes, 8)) {
        (Some(t), Some(d)) => (t as usize, d as usize),
        _ => return Err(bad("truncated header")),
    };
    let body = &bytes[12..];
    if body.len() != 4 * t * d {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            4 * t * d,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureStream {
        frames: t,
        dim: d,
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!(
                "unknown split {s:?} (train, val, test)"
            ))),
        }
    }
}

/// Scalar pixel normalization statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

pub const STD_GUARD: f64 = 1e-6;

impl Stats {
    /// Stacks equally sized clips into a normalized `[B, T, H, W]` batch.
    pub fn normalize(&self, clips: &[&Clip]) -> Result<Array> {
        let first = clips
            .first()
            .ok_or_else(|| Error::contract("empty batch"))?;
        let (t, h, w) = first.dims();
        let mut data = Vec::with_capacity(clips.len() * t * h * w);
        for c in clips {
            if c.dims() != (t, h, w) {
                return Err(Error::contract(format!(
                    "batch mixes clip sizes {:?} and {:?}",
                    (t, h, w),
                    c.dims()
                )));
            }
            data.extend(c.data().iter().map(|&v| (v as f64 - self.mean) / self.std));
        }
        Array::new(vec![clips.len(), t, h, w], data)
    }
}

/// Population mean and standard deviation over every pixel of `clips`.
pub fn compute_stats<'a>(clips: impl IntoIterator<Item = &'a Clip>) -> Stats {
    let (mut n, mut sum, mut sq) = (0u64, 0u64, 0u128);
    for c in clips {
        for &v in c.data() {
            n += 1;
            sum += v as u64;
            sq += (v as u128) * (v as u128);
        }
    }
    if n == 0 {
        return Stats {
            mean: 0.0,
            std: 1.0,
        };
    }
    let mean = sum as f64 / n as f64;
    let var = (sq as f64 / n as f64 - mean * mean).max(0.0);
    Stats {
        mean,
        std: libm::sqrt(var).max(STD_GUARD),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub clip: PathBuf,
    pub labels: PathBuf,
    pub features: Option<PathBuf>,
}

/// Ordered clip list with splits and train-split statistics. Paths are stored
/// relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub stats: Stats,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad =
            |line: usize, d: String| Error::format("manifest", path, format!("line {line}: {d}"));
        let mut entries = Vec::new();
        let mut stats = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#stats") {
                let mut mean = None;
                let mut std = None;
                for tok in rest.split_whitespace() {
                    match tok.split_once('=') {
                        Some(("mean", v)) => mean = v.parse::<f64>().ok(),
                        Some(("std", v)) => std = v.parse::<f64>().ok(),
                        _ => return Err(bad(i + 1, format!("bad stats token {tok:?}"))),
                    }
                }
                match (mean, std) {
                    (Some(mean), Some(std)) if std > 0.0 => stats = Some(Stats { mean, std }),
                    _ => return Err(bad(i + 1, "stats need mean and positive std".into())),
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(
                    i + 1,
                    format!("expected 4 tab-separated columns, got {}", cols.len()),
                ));
            }
            let split = cols[0]
                .parse()
                .map_err(|e: Error| bad(i + 1, e.to_string()))?;
            entries.push(ManifestEntry {
                split,
                clip: cols[1].into(),
                labels: cols[2].into(),
                features: (cols[3] != "-").then(|| cols[3].into()),
            });
        }
        let stats = stats.ok_or_else(|| bad(0, "missing #stats line".into()))?;
        Ok(Manifest {
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            entries,
            stats,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let feat = e
                .features
                .as_ref()
                .map_or("-".to_string(), |p| p.display().to_string());
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.split,
                e.clip.display(),
                e.labels.display(),
                feat
            ));
        }
        s.push_str(&format!(
            "#stats mean={} std={}\n",
            self.stats.mean, self.stats.std
        ));
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Entries of one split with their manifest positions, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }

    /// Loads every clip of `split`. A clip's id is its manifest position.
    pub fn load_split(&self, split: Split, with_features: bool) -> Result<Vec<LabeledClip>> {
        self.split(split)
            .map(|(i, e)| self.load_entry(i, e, with_features))
            .collect()
    }

    fn load_entry(&self, id: usize, e: &ManifestEntry, with_features: bool) -> Result<LabeledClip> {
        let clip = read_clip(&self.resolve(&e.clip))?;
        let labels_path = self.resolve(&e.labels);
        let labels = AffectSeries::read_csv(&labels_path)?;
        if labels.len() != clip.frames() {
            return Err(Error::format(
                "labels",
                labels_path,
                format!("{} rows for a {}-frame clip", labels.len(), clip.frames()),
            ));
        }
        let features = match (&e.features, with_features) {
            (Some(p), true) => Some(read_features(&self.resolve(p))?),
            (None, true) => {
                return Err(Error::config(format!(
                    "clip {} has no feature stream",
                    e.clip.display()
                )));
            }
            _ => None,
        };
        Ok(LabeledClip {
            id: id as u64,
            clip,
            labels,
            features,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub id: u64,
    pub clip: Clip,
    pub labels: AffectSeries,
    pub features: Option<FeatureStream>,
}

/// Generates clips, labels and feature streams under `out_dir`, writes the
/// manifest there and returns it.
pub fn generate(cfg: &SyntheticConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let (n_train, n_val, _) = cfg.split_sizes();

    let entries = (0..cfg.num_clips)
        .into_par_iter()
        .map(|i| {
            let (labels, clip) = synthesize(cfg, i as u64);
            let stem = format!("clip_{i:04}");
            let (clip_rel, lab_rel, feat_rel) = (
                PathBuf::from(format!("clips/{stem}.ssva")),
                PathBuf::from(format!("clips/{stem}.csv")),
                PathBuf::from(format!("clips/{stem}.ssvf")),
            );
            write_clip(&out_dir.join(&clip_rel), &clip)?;
            labels.write_csv(&out_dir.join(&lab_rel))?;
            write_features(
                &out_dir.join(&feat_rel),
                &FeatureStream::from_labels(&labels),
            )?;
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let entry = ManifestEntry {
                split,
                clip: clip_rel,
                labels: lab_rel,
                features: Some(feat_rel),
            };
            Ok((entry, (split == Split::Train).then_some(clip)))
        })
        .collect::<Result<Vec<_>>>()?;

    let stats = compute_stats(entries.iter().filter_map(|(_, c)| c.as_ref()));
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries: entries.into_iter().map(|(e, _)| e).collect(),
        stats,
    };
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Labels and frames of clip `index` (pure function of config and index).
pub fn synthesize(cfg: &SyntheticConfig, index: u64) -> (AffectSeries, Clip) {
    let key = |sub: u64| rng::keyed(&[cfg.seed, purpose::GENERATE, index, sub]);
    let valence = trajectory(&mut key(0), cfg.frames, cfg.walk_sigma, cfg.smooth_window);
    let arousal = trajectory(&mut key(1), cfg.frames, cfg.walk_sigma, cfg.smooth_window);
    let mut noise = key(2);
    let mut data = Vec::with_capacity(cfg.frames * cfg.height * cfg.width);
    for (&a, &v) in arousal.iter().zip(&valence) {
        data.extend(render_frame(
            a,
            v,
            cfg.height,
            cfg.width,
            cfg.noise_std,
            &mut noise,
        ));
    }
    let clip = Clip::new(cfg.frames, cfg.height, cfg.width, data).expect("validated dimensions");
    (AffectSeries { valence, arousal }, clip)
}

/// Fixed-length training window. Frames past `valid` are zero padding and
/// must be excluded from losses.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub clip: Clip,
    pub labels: AffectSeries,
    pub features: Option<FeatureStream>,
    pub valid: usize,
}

/// Uniformly placed contiguous window of `length` frames; zero-padded at the
/// end when the clip is shorter.
pub fn sample_segment(c: &LabeledClip, length: usize, rng: &mut ChaCha8Rng) -> Result<Segment> {
    if length == 0 {
        return Err(Error::contract("segment length must be positive"));
    }
    let t = c.clip.frames();
    let (start, valid) = if t >= length {
        (rng.random_range(0..=t - length), length)
    } else {
        (0, t)
    };
    let mut clip = c.clip.frames_range(start, valid)?;
    let mut labels = AffectSeries {
        valence: c.labels.valence[start..start + valid].to_vec(),
        arousal: c.labels.arousal[start..start + valid].to_vec(),
    };
    let mut features = c.features.as_ref().map(|f| FeatureStream {
        frames: valid,
        dim: f.dim,
        data: f.data[start * f.dim..(start + valid) * f.dim].to_vec(),
    });
    if valid < length {
        let (h, w) = (clip.height(), clip.width());
        let mut data = clip.data().to_vec();
        data.resize(length * h * w, 0);
        clip = Clip::new(length, h, w, data)?;
        labels.valence.resize(length, 0.0);
        labels.arousal.resize(length, 0.0);
        if let Some(f) = &mut features {
            f.data.resize(length * f.dim, 0.0);
            f.frames = length;
        }
    }
    Ok(Segment {
        clip,
        labels,
        features,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        assert_eq!(SyntheticConfig::default().split_sizes(), (40, 8, 8));
        let c = SyntheticConfig {
            num_clips: 10,
            ..Default::default()
        };
        assert_eq!(c.split_sizes(), (8, 1, 1));
    }

    #[test]
    fn center_pixel_at_full_arousal() {
        let mut r = rng::keyed(&[0]);
        let f = render_frame(1.0, 0.0, 64, 64, 0.0, &mut r);
        assert_eq!(f[31 * 64 + 31], 228);
        assert_eq!(f[0], 20);
    }

    #[test]
    fn zero_valence_is_centered() {
        let mut r = rng::keyed(&[0]);
        let f = render_frame(0.3, 0.0, 32, 32, 0.0, &mut r);
        for row in 0..32 {
            for col in 0..16 {
                assert_eq!(f[row * 32 + col], f[row * 32 + 31 - col]);
            }
        }
    }

    #[test]
    fn trajectory_in_range() {
        let mut r = rng::keyed(&[3]);
        let t = trajectory(&mut r, 500, 0.3, 9);
        assert_eq!(t.len(), 500);
        assert!(t.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn stats_cases() {
        let c = Clip::filled(2, 3, 3, 100);
        let s = compute_stats([&c]);
        assert_eq!((s.mean, s.std), (100.0, STD_GUARD));
        let two = Clip::new(1, 1, 2, vec![0, 255]).unwrap();
        let s = compute_stats([&two]);
        assert_eq!((s.mean, s.std), (127.5, 127.5));
    }

    fn labeled(t: usize) -> LabeledClip {
        let clip = Clip::new(t, 2, 2, (0..4 * t).map(|i| (i % 251) as u8 + 1).collect()).unwrap();
        let labels = AffectSeries {
            valence: (0..t).map(|i| i as f64 / t as f64).collect(),
            arousal: vec![0.5; t],
        };
        LabeledClip {
            id: 0,
            clip,
            labels,
            features: None,
        }
    }

    #[test]
    fn segment_whole_clip() {
        let c = labeled(6);
        let s = sample_segment(&c, 6, &mut rng::keyed(&[1])).unwrap();
        assert_eq!(
            (s.clip.clone(), s.labels.clone(), s.valid),
            (c.clip, c.labels, 6)
        );
    }

    #[test]
    fn segment_padding() {
        let c = labeled(300);
        let s = sample_segment(&c, 500, &mut rng::keyed(&[1])).unwrap();
        assert_eq!((s.clip.frames(), s.valid), (500, 300));
        assert!(s.clip.data()[300 * 4..].iter().all(|&v| v == 0));
        assert!(sample_segment(&c, 0, &mut rng::keyed(&[1])).is_err());
    }

    #[test]
    fn segment_is_aligned_and_deterministic() {
        let c = labeled(50);
        let a = sample_segment(&c, 10, &mut rng::keyed(&[9])).unwrap();
        let b = sample_segment(&c, 10, &mut rng::keyed(&[9])).unwrap();
        assert_eq!(a, b);
        let start = (a.labels.valence[0] * 50.0).round() as usize;
        assert_eq!(a.clip.frame(0), c.clip.frame(start));
    }
}
