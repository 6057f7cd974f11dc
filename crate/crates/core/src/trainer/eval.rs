//! Whole-clip evaluation with combined and per-video CCC.

use std::path::Path;

use rayon::prelude::*;

use crate::datagen::{LabeledClip, Manifest, Split, Stats};
use crate::error::{Error, Result};
use crate::labels::{AffectSeries, Dim};
use crate::losses::{ccc, combined_ccc};
use crate::model::Model;

/// Anything that maps a whole clip to per-frame predictions.
pub trait Predictor: Sync {
    fn predict(&self, clip: &LabeledClip) -> Result<AffectSeries>;
}

/// Center crop to the model input size, normalize, run the network.
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub stats: Stats,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, c: &LabeledClip) -> Result<AffectSeries> {
        let s = self.model.config.input_size;
        let crop = c.clip.center_crop(s, s)?;
        let x = self.stats.normalize(&[&crop])?;
        let t = crop.frames();
        let out = self.model.predict(&x.reshape(&[t, s, s])?)?;
        let d = out.data();
        let arousal = (0..t).map(|i| d[2 * i + Dim::Arousal.index()]).collect();
        let valence = (0..t).map(|i| d[2 * i + Dim::Valence.index()]).collect();
        AffectSeries::new(valence, arousal)
    }
}

/// CCC, or 0 with the degeneracy flag set when it is undefined.
fn scored(r: Result<f64>) -> Result<(f64, bool)> {
    match r {
        Ok(c) => Ok((c, false)),
        Err(Error::DegenerateSignal { .. }) => Ok((0.0, true)),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoScore {
    pub id: u64,
    /// Indexed by [`Dim::index`].
    pub ccc: [f64; 2],
    pub degenerate: [bool; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// CCC over the concatenation of all clips, by [`Dim::index`].
    pub combined: [f64; 2],
    pub degenerate: [bool; 2],
    pub videos: Vec<VideoScore>,
}

impl EvalReport {
    pub fn arousal(&self) -> f64 {
        self.combined[Dim::Arousal.index()]
    }

    pub fn valence(&self) -> f64 {
        self.combined[Dim::Valence.index()]
    }

    /// Mean of the two combined CCCs (the checkpoint selector).
    pub fn mean(&self) -> f64 {
        0.5 * (self.combined[0] + self.combined[1])
    }

    /// Per-video rows followed by a `combined` row.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("clip,ccc_arousal,ccc_valence,degenerate_arousal,degenerate_valence\n");
        for v in &self.videos {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                v.id, v.ccc[0], v.ccc[1], v.degenerate[0], v.degenerate[1]
            ));
        }
        s.push_str(&format!(
            "combined,{},{},{},{}\n",
            self.combined[0], self.combined[1], self.degenerate[0], self.degenerate[1]
        ));
        s
    }
}

/// Scores `pred` on every clip in the given order; no augmentation, no
/// segmenting.
pub fn evaluate_clips(pred: &dyn Predictor, clips: &[LabeledClip]) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::config("nothing to evaluate: the split has no clips"));
    }
    let preds: Vec<AffectSeries> = clips
        .par_iter()
        .map(|c| pred.predict(c))
        .collect::<Result<_>>()?;
    let mut videos = Vec::with_capacity(clips.len());
    for (c, p) in clips.iter().zip(&preds) {
        if p.len() != c.labels.len() {
            return Err(Error::contract(format!(
                "clip {}: {} predictions for {} frames",
                c.id,
                p.len(),
                c.labels.len()
            )));
        }
        let mut score = VideoScore {
            id: c.id,
            ccc: [0.0; 2],
            degenerate: [false; 2],
        };
        for dim in Dim::ALL {
            let (v, d) = scored(ccc(c.labels.get(dim), p.get(dim)))?;
            score.ccc[dim.index()] = v;
            score.degenerate[dim.index()] = d;
        }
        videos.push(score);
    }
    let targets: Vec<&AffectSeries> = clips.iter().map(|c| &c.labels).collect();
    let preds: Vec<&AffectSeries> = preds.iter().collect();
    let mut combined = [0.0; 2];
    let mut degenerate = [false; 2];
    for dim in Dim::ALL {
        let (v, d) = scored(combined_ccc(&targets, &preds, dim))?;
        combined[dim.index()] = v;
        degenerate[dim.index()] = d;
    }
    Ok(EvalReport {
        combined,
        degenerate,
        videos,
    })
}

/// Loads `checkpoint` and scores it on `split` of `manifest`.
pub fn evaluate(checkpoint: &Path, manifest: &Manifest, split: Split) -> Result<EvalReport> {
    let model = Model::load(checkpoint)?;
    let clips = manifest.load_split(split, false)?;
    evaluate_clips(
        &ModelPredictor {
            model: &model,
            stats: manifest.stats,
        },
        &clips,
    )
}
