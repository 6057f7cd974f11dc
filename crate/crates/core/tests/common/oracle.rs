//! Direct plain-loop implementations of the metric and loss formulas, kept
//! free of the library's graph and helpers.

use ssvaerr::labels::{AffectSeries, Dim};
use ssvaerr::losses::{ClassTargets, LossConfig, Term};

fn mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

/// `2 s_xy / (s_x² + s_y² + (x̄ − ȳ)²)` with population (1/N) moments.
pub fn ccc(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    2.0 * (sxy / n) / (sxx / n + syy / n + (mx - my).powi(2))
}

pub fn ccc_loss(y: &[f64], yhat: &[f64]) -> f64 {
    let (mx, my) = (mean(y), mean(yhat));
    let n = y.len() as f64;
    let cov: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    let vx: f64 = y.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy: f64 = yhat.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    1.0 - 2.0 * cov / (vx + vy + (mx - my).powi(2) + 1e-8)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Per-frame cross-entropy for class indices `cls` and `[F, L]` logits.
pub fn ce_frames(cls: &[usize], logits: &[f64], l: usize) -> Vec<f64> {
    cls.iter()
        .enumerate()
        .map(|(f, &c)| -softmax(&logits[f * l..(f + 1) * l])[c].max(1e-12).ln())
        .collect()
}

pub fn ce(cls: &[usize], logits: &[f64], l: usize) -> f64 {
    mean(&ce_frames(cls, logits, l))
}

pub fn ncce(cls: &[usize], logits: &[f64], l: usize, centroids: &[f64]) -> f64 {
    let frames = ce_frames(cls, logits, l);
    let mut total = 0.0;
    for (f, &c) in cls.iter().enumerate() {
        let p = softmax(&logits[f * l..(f + 1) * l]);
        let mut s = 0.0;
        for k in 0..l {
            let y = if k == c { 1.0 } else { 0.0 };
            s += centroids[k] * (y - p[k]);
        }
        total += (1.0 + s.abs()) * frames[f];
    }
    total / cls.len() as f64
}

/// Every active term, unweighted, in (dimension, term) order, from `[F, 2]`
/// regression outputs and `[F, 2, L]` logits.
pub fn composite_terms(
    reg: &[f64],
    logits: &[f64],
    targets: &AffectSeries,
    cfg: &LossConfig,
    classes: &ClassTargets,
) -> Vec<(Dim, Term, f64)> {
    let f = targets.len();
    let l = classes.num_bins();
    let mut out = Vec::new();
    for dim in Dim::ALL {
        let d = dim.index();
        let y = targets.get(dim);
        let yhat: Vec<f64> = (0..f).map(|i| reg[i * 2 + d]).collect();
        let lg: Vec<f64> = (0..f)
            .flat_map(|i| logits[(i * 2 + d) * l..(i * 2 + d + 1) * l].iter().copied())
            .collect();
        let cls: Vec<usize> = y
            .iter()
            .map(|&v| classes.discretizer.discretize(v))
            .collect();
        for term in Term::ALL {
            if cfg.weight(dim, term) == 0.0 {
                continue;
            }
            let v = match term {
                Term::Ccc => ccc_loss(y, &yhat),
                Term::Mse => mse(y, &yhat),
                Term::Ce => ce(&cls, &lg, l),
                Term::Ncce => ncce(&cls, &lg, l, &classes.centroids[d]),
            };
            out.push((dim, term, v));
        }
    }
    out
}

pub fn composite(
    reg: &[f64],
    logits: &[f64],
    targets: &AffectSeries,
    cfg: &LossConfig,
    classes: &ClassTargets,
) -> f64 {
    composite_terms(reg, logits, targets, cfg, classes)
        .into_iter()
        .map(|(d, t, v)| cfg.weight(d, t) * v)
        .sum()
}
