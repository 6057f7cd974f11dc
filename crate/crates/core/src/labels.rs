//! Continuous valence/arousal labels and their discretization into classes.

use std::fmt::Write as _;
use std::path::Path;

use rand::RngExt;

use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// Default number of classes per affect dimension.
pub const DEFAULT_BINS: usize = 20;

/// Affect dimension. The index is the position in every `[.., 2]` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dim {
    Arousal = 0,
    Valence = 1,
}

impl Dim {
    pub const ALL: [Dim; 2] = [Dim::Arousal, Dim::Valence];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dim::Arousal => "arousal",
            Dim::Valence => "valence",
        }
    }
}

/// Per-frame valence and arousal of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct AffectSeries {
    pub valence: Vec<f64>,
    pub arousal: Vec<f64>,
}

impl AffectSeries {
    pub fn new(valence: Vec<f64>, arousal: Vec<f64>) -> Result<Self> {
        if valence.len() != arousal.len() {
            return Err(Error::contract(format!(
                "valence has {} frames, arousal {}",
                valence.len(),
                arousal.len()
            )));
        }
        Ok(AffectSeries { valence, arousal })
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    pub fn get(&self, dim: Dim) -> &[f64] {
        match dim {
            Dim::Arousal => &self.arousal,
            Dim::Valence => &self.valence,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,valence,arousal\n");
        for (i, (v, a)) in self.valence.iter().zip(&self.arousal).enumerate() {
            writeln!(s, "{i},{v},{a}").unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|detail| Error::format("labels", path, detail))
    }

    fn parse_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "frame,valence,arousal" => {}
            other => return Err(format!("bad header {other:?}")),
        }
        let (mut valence, mut arousal) = (Vec::new(), Vec::new());
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(format!("row {row}: expected 3 fields"));
            }
            let frame: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| format!("row {row}: {e}"))?;
            if frame != row {
                return Err(format!("row {row}: frame index {frame} out of sequence"));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("row {row}: {e}"))
            };
            valence.push(parse(fields[1])?);
            arousal.push(parse(fields[2])?);
        }
        Ok(AffectSeries { valence, arousal })
    }
}

/// Uniform binning of a label range plus one representative value per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretizer {
    num_bins: usize,
    lo: f64,
    hi: f64,
    centroids: Vec<f64>,
    fallback: bool,
}

impl Discretizer {
    /// Uniform bins with midpoint centroids.
    pub fn new(num_bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::config(format!(
                "need at least 2 bins, got {num_bins}"
            )));
        }
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less)
            || !lo.is_finite()
            || !hi.is_finite()
        {
            return Err(Error::config(format!("label range [{lo}, {hi}] is empty")));
        }
        let w = (hi - lo) / num_bins as f64;
        Ok(Discretizer {
            num_bins,
            lo,
            hi,
            centroids: (0..num_bins).map(|l| lo + (l as f64 + 0.5) * w).collect(),
            fallback: false,
        })
    }

    /// Replaces the centroids by k-means centroids of `values`.
    pub fn with_kmeans(mut self, values: &[f64], seed: u64) -> Self {
        let fit = kmeans_centroids(values, self.num_bins, seed, (self.lo, self.hi));
        self.centroids = fit.centroids;
        self.fallback = fit.fallback;
        self
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    /// Whether k-means fell back to uniform midpoints.
    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.num_bins as f64
    }

    /// The `L + 1` bin edges.
    pub fn boundaries(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..=self.num_bins)
            .map(|i| {
                if i == self.num_bins {
                    self.hi
                } else {
                    self.lo + i as f64 * w
                }
            })
            .collect()
    }

    /// Bin index of `v`; values outside the range are clamped first.
    pub fn discretize(&self, v: f64) -> usize {
        let c = v.clamp(self.lo, self.hi);
        let raw = ((c - self.lo) / (self.hi - self.lo) * self.num_bins as f64).floor();
        (raw as usize).min(self.num_bins - 1)
    }
}

pub fn one_hot(idx: usize, num_bins: usize) -> Result<Array> {
    if idx >= num_bins {
        return Err(Error::contract(format!(
            "class {idx} out of range for {num_bins} bins"
        )));
    }
    let mut v = vec![0.0; num_bins];
    v[idx] = 1.0;
    Ok(Array::from_vec(v))
}

/// Outcome of a 1-D k-means fit.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    /// Sorted ascending; entry `l` is assigned to bin `l`.
    pub centroids: Vec<f64>,
    /// True when there were fewer than `k` distinct values.
    pub fallback: bool,
    /// Sum of squared distances after initialization and after each update.
    pub objective: Vec<f64>,
}

const KMEANS_MAX_ITERS: usize = 100;

fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate() {
        if (v - c).abs() < (v - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

fn objective(values: &[f64], centroids: &[f64], assign: &[usize]) -> f64 {
    values
        .iter()
        .zip(assign)
        .map(|(v, &j)| (v - centroids[j]) * (v - centroids[j]))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding, run to an assignment fixpoint or
/// 100 iterations. With fewer than `k` distinct values the uniform-bin
/// midpoints of `range` are returned and `fallback` is set.
pub fn kmeans_centroids(values: &[f64], k: usize, seed: u64, range: (f64, f64)) -> KMeansFit {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if k == 0 || distinct.len() < k {
        log::warn!(
            "k-means: {} distinct values for {k} clusters, using uniform midpoints",
            distinct.len()
        );
        let w = (range.1 - range.0) / k.max(1) as f64;
        return KMeansFit {
            centroids: (0..k).map(|l| range.0 + (l as f64 + 0.5) * w).collect(),
            fallback: true,
            objective: Vec::new(),
        };
    }

    let mut rng = rng::keyed(&[seed, purpose::KMEANS]);
    let mut centroids = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng::unit(&mut rng) * total;
            let mut acc = 0.0;
            let mut pick = values.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            values[pick]
        } else {
            *distinct
                .iter()
                .find(|v| !centroids.contains(v))
                .expect("k distinct values")
        };
        centroids.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }

    let mut assign: Vec<usize> = values.iter().map(|&v| nearest(&centroids, v)).collect();
    let mut trace = vec![objective(values, &centroids, &assign)];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (v, &j) in values.iter().zip(&assign) {
            sums[j] += v;
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        trace.push(objective(values, &centroids, &assign));
        let next: Vec<usize> = values.iter().map(|&v| nearest(&centroids, v)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    centroids.sort_by(f64::total_cmp);
    KMeansFit {
        centroids,
        fallback: false,
        objective: trace,
    }
}
