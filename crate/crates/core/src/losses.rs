//! Regression and classification losses for affect prediction, and the
//! concordance metric used for evaluation.
//!
//! Loss functions build nodes on a [`Graph`] so their gradients come from the
//! tape. The metric functions work on plain slices.

use std::fmt;
use std::path::Path;

use crate::diffcore::{Array, Graph, NodeId};
use crate::error::{Error, Result};
use crate::kv;
use crate::labels::{one_hot, AffectSeries, Dim, Discretizer};

/// Denominator guard of the training-time CCC.
pub const CCC_EPS: f64 = 1e-8;
/// Below this the exact CCC denominator is considered zero.
pub const CCC_DEGENERATE: f64 = 1e-12;
/// Probability floor inside the cross-entropy logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

fn moments(y: &[f64], yhat: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let (mut cov, mut vy, mut vh) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        cov += (a - my) * (b - mh);
        vy += (a - my) * (a - my);
        vh += (b - mh) * (b - mh);
    }
    (my, mh, cov / n, vy / n, vh / n)
}

/// Lin's concordance correlation coefficient with population moments.
pub fn ccc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::contract(format!(
            "ccc: lengths {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::contract("ccc needs at least 2 frames"));
    }
    let (my, mh, cov, vy, vh) = moments(y, yhat);
    let den = vy + vh + (my - mh) * (my - mh);
    if den < CCC_DEGENERATE {
        return Err(Error::DegenerateSignal { denominator: den });
    }
    Ok(2.0 * cov / den)
}

/// CCC of the concatenation of all videos, in the given order.
pub fn combined_ccc(targets: &[&AffectSeries], preds: &[&AffectSeries], dim: Dim) -> Result<f64> {
    if targets.len() != preds.len() {
        return Err(Error::contract(
            "combined_ccc: target and prediction counts differ",
        ));
    }
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for (t, p) in targets.iter().zip(preds) {
        if t.len() != p.len() {
            return Err(Error::contract("combined_ccc: video length mismatch"));
        }
        y.extend_from_slice(t.get(dim));
        yhat.extend_from_slice(p.get(dim));
    }
    ccc(&y, &yhat)
}

fn check_same_shape(g: &Graph, a: NodeId, b: NodeId, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::contract(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// `1 − CCC` with an ε-guarded denominator; `y` and `yhat` are `[F]`.
pub fn ccc_loss(g: &mut Graph, y: NodeId, yhat: NodeId) -> Result<NodeId> {
    check_same_shape(g, y, yhat, "ccc_loss")?;
    let my = g.mean(y);
    let mh = g.mean(yhat);
    let dy = g.sub(y, my)?;
    let dh = g.sub(yhat, mh)?;
    let prod = g.mul(dy, dh)?;
    let cov = g.mean(prod);
    let sy = g.square(dy);
    let vy = g.mean(sy);
    let sh = g.square(dh);
    let vh = g.mean(sh);
    let dm = g.sub(my, mh)?;
    let dm2 = g.square(dm);
    let v = g.add(vy, vh)?;
    let den = g.add(v, dm2)?;
    let den = g.add_scalar(den, CCC_EPS);
    let num = g.mul_scalar(cov, 2.0);
    let c = g.div(num, den)?;
    let neg = g.mul_scalar(c, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Mean squared difference.
pub fn mse(g: &mut Graph, y: NodeId, yhat: NodeId) -> Result<NodeId> {
    check_same_shape(g, y, yhat, "mse")?;
    let d = g.sub(yhat, y)?;
    let s = g.square(d);
    Ok(g.mean(s))
}

fn check_class_shapes(g: &Graph, onehot: NodeId, logits: NodeId, what: &str) -> Result<()> {
    let (s1, s2) = (g.shape(onehot), g.shape(logits));
    if s1.len() != 2 || s1 != s2 {
        return Err(Error::contract(format!(
            "{what}: expected matching [F, L], got {s1:?} and {s2:?}"
        )));
    }
    Ok(())
}

/// Per-frame `−Σ_l Y⁽ˡ⁾ log p⁽ˡ⁾`, shape `[F]`, plus the probability node.
fn ce_frames(g: &mut Graph, onehot: NodeId, logits: NodeId) -> Result<(NodeId, NodeId)> {
    let p = g.softmax(logits);
    let lp = g.log(p, LOG_FLOOR);
    let t = g.mul(onehot, lp)?;
    let s = g.sum_axis(t, 1)?;
    Ok((g.mul_scalar(s, -1.0), p))
}

/// Mean over frames of the cross-entropy between one-hot targets and
/// `softmax(logits)`; both `[F, L]`.
pub fn ce(g: &mut Graph, onehot: NodeId, logits: NodeId) -> Result<NodeId> {
    check_class_shapes(g, onehot, logits, "ce")?;
    let (frames, _) = ce_frames(g, onehot, logits)?;
    Ok(g.mean(frames))
}

/// `1 + |Σ_l K⁽ˡ⁾ (Y⁽ˡ⁾ − Ŷ⁽ˡ⁾)|`.
pub fn cost_norm(onehot: &[f64], probs: &[f64], centroids: &[f64]) -> f64 {
    let s: f64 = onehot
        .iter()
        .zip(probs)
        .zip(centroids)
        .map(|((y, p), k)| k * (y - p))
        .sum();
    1.0 + s.abs()
}

/// Cost-sensitive cross-entropy: per-frame CE weighted by the cost norm.
///
/// With `norm_gradient` false the cost norm is a constant weight; otherwise
/// gradient also flows through the predicted distribution inside it.
pub fn ncce(
    g: &mut Graph,
    onehot: NodeId,
    logits: NodeId,
    centroids: &[f64],
    norm_gradient: bool,
) -> Result<NodeId> {
    check_class_shapes(g, onehot, logits, "ncce")?;
    let (f, l) = (g.shape(logits)[0], g.shape(logits)[1]);
    if centroids.len() != l {
        return Err(Error::contract(format!(
            "ncce: {} centroids for {l} classes",
            centroids.len()
        )));
    }
    let (frames, p) = ce_frames(g, onehot, logits)?;
    let weights = if norm_gradient {
        let tiled = Array::from_fn(&[f, l], |i| centroids[i % l]);
        let k = g.constant(tiled);
        let d = g.sub(onehot, p)?;
        let kd = g.mul(d, k)?;
        let s = g.sum_axis(kd, 1)?;
        let a = g.abs(s);
        g.add_scalar(a, 1.0)
    } else {
        let (y, pv) = (g.value(onehot).data(), g.value(p).data());
        let w: Vec<f64> = (0..f)
            .map(|i| cost_norm(&y[i * l..(i + 1) * l], &pv[i * l..(i + 1) * l], centroids))
            .collect();
        g.constant(Array::from_vec(w))
    };
    let weighted = g.mul(frames, weights)?;
    Ok(g.mean(weighted))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Ccc = 0,
    Mse = 1,
    Ce = 2,
    Ncce = 3,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Ccc, Term::Mse, Term::Ce, Term::Ncce];

    pub fn name(self) -> &'static str {
        match self {
            Term::Ccc => "ccc",
            Term::Mse => "mse",
            Term::Ce => "ce",
            Term::Ncce => "ncce",
        }
    }
}

/// Per-dimension weights of the composite loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    weights: [[f64; 4]; 2],
}

impl Default for LossConfig {
    /// CCC loss alone, weight 1 on both dimensions.
    fn default() -> Self {
        let mut c = LossConfig::zero();
        c.set(Dim::Arousal, Term::Ccc, 1.0);
        c.set(Dim::Valence, Term::Ccc, 1.0);
        c
    }
}

impl LossConfig {
    pub fn zero() -> Self {
        LossConfig {
            weights: [[0.0; 4]; 2],
        }
    }

    pub fn weight(&self, dim: Dim, term: Term) -> f64 {
        self.weights[dim.index()][term as usize]
    }

    pub fn set(&mut self, dim: Dim, term: Term, w: f64) {
        self.weights[dim.index()][term as usize] = w;
    }

    /// Same weight for a term on both dimensions.
    pub fn with_both(mut self, term: Term, w: f64) -> Self {
        self.set(Dim::Arousal, term, w);
        self.set(Dim::Valence, term, w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.weights.iter().flatten();
        if all.clone().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::config(
                "loss weights must be finite and non-negative",
            ));
        }
        if !all.clone().any(|w| *w > 0.0) {
            return Err(Error::config("at least one loss weight must be positive"));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text).map_err(Error::config)?;
        let mut cfg = LossConfig::zero();
        for e in entries {
            let (dim, term) = e.key.split_once('.').ok_or_else(|| {
                Error::config(format!("loss key {:?} must be <dimension>.<term>", e.key))
            })?;
            let dim = Dim::ALL
                .into_iter()
                .find(|d| d.name() == dim)
                .ok_or_else(|| {
                    Error::config(format!("unknown dimension {dim:?} (arousal, valence)"))
                })?;
            let term = Term::ALL
                .into_iter()
                .find(|t| t.name() == term)
                .ok_or_else(|| {
                    Error::config(format!("unknown loss term {term:?} (ccc, mse, ce, ncce)"))
                })?;
            cfg.set(dim, term, kv::parse_f64(&e.key, &e.value)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(d) => Error::format("loss config", path, d),
            other => other,
        })
    }
}

impl fmt::Display for LossConfig {
    /// Non-zero weights as `dim.term=w` joined by `;`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for dim in Dim::ALL {
            for term in Term::ALL {
                let w = self.weight(dim, term);
                if w != 0.0 {
                    if !first {
                        f.write_str(";")?;
                    }
                    write!(f, "{}.{}={w}", dim.name(), term.name())?;
                    first = false;
                }
            }
        }
        Ok(())
    }
}

/// Class targets for the two classification terms.
#[derive(Clone, Debug)]
pub struct ClassTargets {
    /// Uniform bins used for the cross-entropy class of each frame.
    pub discretizer: Discretizer,
    /// Cost-norm centroids per dimension, indexed by [`Dim::index`].
    pub centroids: [Vec<f64>; 2],
    pub cost_norm_gradient: bool,
}

impl ClassTargets {
    /// Uniform bins; midpoint centroids for the cost norm.
    pub fn uniform(discretizer: Discretizer) -> Self {
        let c = discretizer.centroids().to_vec();
        ClassTargets {
            discretizer,
            centroids: [c.clone(), c],
            cost_norm_gradient: false,
        }
    }

    /// Uniform bins for CE; per-dimension k-means centroids for the cost norm.
    pub fn fitted(discretizer: Discretizer, train: &[&AffectSeries], seed: u64) -> Self {
        let fit = |dim: Dim| {
            let values: Vec<f64> = train
                .iter()
                .flat_map(|s| s.get(dim).iter().copied())
                .collect();
            discretizer
                .clone()
                .with_kmeans(&values, seed)
                .centroids()
                .to_vec()
        };
        ClassTargets {
            centroids: [fit(Dim::Arousal), fit(Dim::Valence)],
            discretizer,
            cost_norm_gradient: false,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.discretizer.num_bins()
    }

    /// `[F, L]` one-hot matrix for one label series.
    pub fn one_hot_matrix(&self, values: &[f64]) -> Array {
        let l = self.num_bins();
        let mut data = Vec::with_capacity(values.len() * l);
        for &v in values {
            data.extend_from_slice(
                one_hot(self.discretizer.discretize(v), l)
                    .expect("in range")
                    .data(),
            );
        }
        Array::new(vec![values.len(), l], data).expect("shape")
    }
}

/// Value of each active (non-zero weight) term, unweighted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub terms: Vec<(Dim, Term, f64)>,
}

/// Weighted sum of all active terms over both dimensions.
///
/// `reg` is `[F, 2]`, `logits` is `[F, 2, L]`, `targets` holds `F` frames.
/// With `F = 0` the loss is the constant 0 (and so all gradients vanish).
pub fn composite_loss(
    g: &mut Graph,
    reg: NodeId,
    logits: NodeId,
    targets: &AffectSeries,
    cfg: &LossConfig,
    classes: &ClassTargets,
) -> Result<(NodeId, LossBreakdown)> {
    cfg.validate()?;
    let f = targets.len();
    let l = classes.num_bins();
    if g.shape(reg) != [f, 2] {
        return Err(Error::contract(format!(
            "regression output {:?}, expected [{f}, 2]",
            g.shape(reg)
        )));
    }
    if g.shape(logits) != [f, 2, l] {
        return Err(Error::contract(format!(
            "logits {:?}, expected [{f}, 2, {l}]",
            g.shape(logits)
        )));
    }
    let mut breakdown = LossBreakdown::default();
    if f == 0 {
        return Ok((g.constant(Array::scalar(0.0)), breakdown));
    }
    let mut total: Option<NodeId> = None;
    for dim in Dim::ALL {
        let active: Vec<Term> = Term::ALL
            .into_iter()
            .filter(|&t| cfg.weight(dim, t) > 0.0)
            .collect();
        if active.is_empty() {
            continue;
        }
        let d = dim.index();
        let y = targets.get(dim);
        let needs_reg = active.iter().any(|t| matches!(t, Term::Ccc | Term::Mse));
        let needs_cls = active.iter().any(|t| matches!(t, Term::Ce | Term::Ncce));
        let (yhat, y_node) = if needs_reg {
            let s = g.slice(reg, 1, d, 1)?;
            let yhat = g.reshape(s, &[f])?;
            (Some(yhat), Some(g.constant(Array::from_vec(y.to_vec()))))
        } else {
            (None, None)
        };
        let (lg, oh) = if needs_cls {
            let s = g.slice(logits, 1, d, 1)?;
            let lg = g.reshape(s, &[f, l])?;
            (Some(lg), Some(g.constant(classes.one_hot_matrix(y))))
        } else {
            (None, None)
        };
        for term in active {
            let node = match term {
                Term::Ccc => ccc_loss(g, y_node.unwrap(), yhat.unwrap())?,
                Term::Mse => mse(g, y_node.unwrap(), yhat.unwrap())?,
                Term::Ce => ce(g, oh.unwrap(), lg.unwrap())?,
                Term::Ncce => ncce(
                    g,
                    oh.unwrap(),
                    lg.unwrap(),
                    &classes.centroids[d],
                    classes.cost_norm_gradient,
                )?,
            };
            breakdown.terms.push((dim, term, g.value(node).item()?));
            let weighted = g.mul_scalar(node, cfg.weight(dim, term));
            total = Some(match total {
                Some(t) => g.add(t, weighted)?,
                None => weighted,
            });
        }
    }
    Ok((
        total.expect("validated config has an active term"),
        breakdown,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, v: &[f64]) -> NodeId {
        g.leaf(Array::from_vec(v.to_vec()))
    }

    #[test]
    fn ccc_hand_case() {
        let c = ccc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((c - 5.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_perfect_and_constant() {
        let y = [0.3, -0.2, 0.9, 0.1];
        assert!((ccc(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(ccc(&y, &[0.5; 4]).unwrap(), 0.0);
        assert!(matches!(
            ccc(&[1.0; 4], &[1.0; 4]),
            Err(Error::DegenerateSignal { .. })
        ));
        assert!(ccc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ccc_loss_cases() {
        let mut g = Graph::new();
        let y = leaf(&mut g, &[1.0, 2.0, 3.0, 4.0]);
        let yh = leaf(&mut g, &[2.0, 3.0, 4.0, 5.0]);
        let l = ccc_loss(&mut g, y, yh).unwrap();
        assert!((g.value(l).item().unwrap() - 2.0 / 7.0).abs() < 1e-8);
        let same = ccc_loss(&mut g, y, y).unwrap();
        assert!(g.value(same).item().unwrap().abs() < 1e-7);
        // Mirror around the mean: CCC = −1.
        let mirrored = leaf(&mut g, &[4.0, 3.0, 2.0, 1.0]);
        let anti = ccc_loss(&mut g, y, mirrored).unwrap();
        assert!((g.value(anti).item().unwrap() - 2.0).abs() < 1e-7);
    }

    #[test]
    fn mse_cases() {
        let mut g = Graph::new();
        let y = leaf(&mut g, &[0.0, 2.0]);
        let yh = leaf(&mut g, &[1.0, 1.0]);
        let l = mse(&mut g, y, yh).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 1.0);
        let z = leaf(&mut g, &[0.0, 0.0]);
        let l = mse(&mut g, z, yh).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 1.0);
    }

    #[test]
    fn ce_cases() {
        let mut g = Graph::new();
        let mut t = vec![0.0; 40];
        t[3] = 1.0;
        t[20 + 7] = 1.0;
        let onehot = g.constant(Array::new(vec![2, 20], t).unwrap());
        let uniform = g.leaf(Array::zeros(&[2, 20]));
        let l = ce(&mut g, onehot, uniform).unwrap();
        assert!((g.value(l).item().unwrap() - 20f64.ln()).abs() < 1e-12);

        let mut peaked = vec![0.0; 40];
        peaked[3] = 60.0;
        peaked[27] = 60.0;
        let p = g.leaf(Array::new(vec![2, 20], peaked.clone()).unwrap());
        let l = ce(&mut g, onehot, p).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-20);

        for v in &mut peaked[20..] {
            *v = 0.0;
        }
        let half = g.leaf(Array::new(vec![2, 20], peaked).unwrap());
        let l = ce(&mut g, onehot, half).unwrap();
        assert!((g.value(l).item().unwrap() - 20f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cost_norm_cases() {
        let d = Discretizer::new(20, -1.0, 1.0).unwrap();
        let k = d.centroids();
        let target = one_hot(10, 20).unwrap();
        assert!((k[10] - 0.05).abs() < 1e-15);
        assert_eq!(cost_norm(target.data(), target.data(), k), 1.0);
        let wrong = one_hot(0, 20).unwrap();
        assert!((cost_norm(target.data(), wrong.data(), k) - 2.0).abs() < 1e-12);
        let uniform = vec![0.05; 20];
        assert!((cost_norm(target.data(), &uniform, k) - 1.05).abs() < 1e-12);
    }

    #[test]
    fn ncce_single_uniform_frame() {
        let d = Discretizer::new(20, -1.0, 1.0).unwrap();
        let mut g = Graph::new();
        let onehot = g.constant(one_hot(10, 20).unwrap().reshape(&[1, 20]).unwrap());
        let logits = g.leaf(Array::zeros(&[1, 20]));
        let l = ncce(&mut g, onehot, logits, d.centroids(), false).unwrap();
        assert!((g.value(l).item().unwrap() - 1.05 * 20f64.ln()).abs() < 1e-12);
        let l = ncce(&mut g, onehot, logits, d.centroids(), true).unwrap();
        assert!((g.value(l).item().unwrap() - 1.05 * 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_config_parse() {
        let c = LossConfig::parse("valence.ccc=1\narousal.ccc=0.66\narousal.ce=0.34\n").unwrap();
        assert_eq!(c.weight(Dim::Valence, Term::Ccc), 1.0);
        assert_eq!(c.weight(Dim::Arousal, Term::Ce), 0.34);
        assert_eq!(c.weight(Dim::Valence, Term::Ce), 0.0);
        assert_eq!(
            c.to_string(),
            "arousal.ccc=0.66;arousal.ce=0.34;valence.ccc=1"
        );
        assert!(LossConfig::parse("").is_err());
        assert!(LossConfig::parse("arousal.ccc=-1").is_err());
        assert!(LossConfig::parse("dominance.ccc=1").is_err());
        assert!(LossConfig::parse("arousal.l1=1").is_err());
    }
}
