//! Fixtures shared by the integration tests: tiny data sets and models, and
//! a central-difference gradient checker.

#![allow(dead_code)]

pub mod oracle;

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssvaerr::datagen::{generate, Manifest, SyntheticConfig};
use ssvaerr::diffcore::{rel_err, Array, Graph, NodeId};
use ssvaerr::labels::{AffectSeries, Discretizer};
use ssvaerr::losses::{composite_loss, ClassTargets, LossConfig, Term};
use ssvaerr::model::{Bound, Freeze, Model, ModelConfig, Tensors};
use ssvaerr::trainer::RunConfig;

pub const FD_STEP: f64 = 1e-5;

/// Central differences at `FD_STEP` and `FD_STEP / 10` of a smooth loss
/// agree to about 1e-10; a larger gap means a ReLU kink lies inside the step.
pub const KINK_GAP: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    Array::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Small enough for finite differences over every tensor.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_size: 8,
        widths: vec![2, 3],
        hidden: 3,
        num_bins: 4,
        bidirectional: true,
    }
}

/// Fast-training model for end-to-end tests on 16×16 frames.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        input_size: 12,
        widths: vec![3, 4],
        hidden: 6,
        num_bins: 5,
        bidirectional: false,
    }
}

pub fn small_data_config(num_clips: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_clips,
        frames: 20,
        height: 16,
        width: 16,
        seed,
        noise_std: 4.0,
        val_fraction: 0.25,
        test_fraction: 0.0,
        ..Default::default()
    }
}

pub fn small_data(dir: &Path, num_clips: usize, seed: u64) -> Manifest {
    generate(&small_data_config(num_clips, seed), dir).expect("generate")
}

pub fn small_run() -> RunConfig {
    RunConfig {
        model: small_model(),
        epochs: 2,
        batch: 3,
        segment: 8,
        ..Default::default()
    }
}

/// Maximum relative error between the tape gradient and central differences
/// of `f` with respect to every coordinate of every input, or of at most
/// `sample` random coordinates per input when given.
pub fn grad_check(
    inputs: &[Array],
    f: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
    sample: Option<(usize, u64)>,
) -> f64 {
    let eval = |vals: &[Array]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| g.leaf(v.clone())).collect();
        let l = f(&mut g, &ids);
        g.value(l).item().unwrap()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| g.leaf(v.clone())).collect();
    let l = f(&mut g, &ids);
    let grads = g.backward(l).unwrap();
    let mut worst = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .cloned()
            .unwrap_or_else(|| Array::zeros(inputs[k].shape()));
        let n = inputs[k].len();
        let coords: Vec<usize> = match sample {
            Some((m, seed)) if m < n => {
                let mut r = rng(seed ^ (k as u64).wrapping_mul(0x9E37_79B9));
                (0..m).map(|_| r.random_range(0..n)).collect()
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let mut vals = inputs.to_vec();
            vals[k].data_mut()[i] += FD_STEP;
            let up = eval(&vals);
            vals[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&vals);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

/// Composite loss of `model` on normalized frames `x` `[B, T, S, S]`, with
/// all four terms active on both dimensions.
pub fn model_loss(
    g: &mut Graph,
    model: &Model,
    p: &Bound,
    x: &Array,
    targets: &AffectSeries,
    classes: &ClassTargets,
) -> NodeId {
    let cfg = LossConfig::zero()
        .with_both(Term::Ccc, 0.4)
        .with_both(Term::Mse, 0.2)
        .with_both(Term::Ce, 0.2)
        .with_both(Term::Ncce, 0.2);
    let (b, t) = (x.shape()[0], x.shape()[1]);
    let xn = g.constant(x.clone());
    let out = model.forward(g, p, xn).unwrap();
    let reg = g.reshape(out.reg, &[b * t, 2]).unwrap();
    let logits = g
        .reshape(out.logits, &[b * t, 2, model.config.num_bins])
        .unwrap();
    composite_loss(g, reg, logits, targets, &cfg, classes)
        .unwrap()
        .0
}

/// Worst relative error between tape and central-difference gradients of
/// [`model_loss`] over `per_tensor` random coordinates of every parameter,
/// and the number of coordinates skipped because a ReLU kink lies within
/// one step.
pub fn model_grad_check(seed: u64, per_tensor: usize) -> (f64, usize) {
    let cfg = tiny_model();
    let mut model = Model::init(cfg.clone(), seed).unwrap();
    let mut r = rng(seed);
    // Zero-initialized shifts put dead channels exactly on the ReLU kink,
    // where central differences average the two one-sided slopes.
    for (name, a) in model.params.iter_mut() {
        if name.ends_with(".shift") || name.ends_with(".bias") || name.contains(".b_") {
            for v in a.data_mut() {
                *v += r.random_range(-0.1..0.1);
            }
        }
    }
    let (b, t, s) = (2, 3, cfg.input_size);
    let x = uniform(&mut r, &[b, t, s, s], -1.5, 1.5);
    let targets = AffectSeries::new(
        (0..b * t).map(|_| r.random_range(-0.9..0.9)).collect(),
        (0..b * t).map(|_| r.random_range(-0.9..0.9)).collect(),
    )
    .unwrap();
    let mut classes = ClassTargets::uniform(Discretizer::new(cfg.num_bins, -1.0, 1.0).unwrap());
    classes.cost_norm_gradient = true;

    let eval = |params: &Tensors| -> f64 {
        let m = Model {
            config: cfg.clone(),
            params: params.clone(),
        };
        let mut g = Graph::new();
        let p = m.bind(&mut g, Freeze::None);
        let l = model_loss(&mut g, &m, &p, &x, &targets, &classes);
        g.value(l).item().unwrap()
    };
    let mut g = Graph::new();
    let p = model.bind(&mut g, Freeze::None);
    let l = model_loss(&mut g, &model, &p, &x, &targets, &classes);
    let grads = g.backward(l).unwrap();

    let (mut worst, mut kinks) = (0.0f64, 0);
    for (name, a) in &model.params {
        let analytic = grads.get(p.get(name).unwrap()).unwrap();
        for _ in 0..per_tensor.min(a.len()) {
            let i = r.random_range(0..a.len());
            let mut params = model.params.clone();
            params[name].data_mut()[i] += FD_STEP;
            let up = eval(&params);
            params[name].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&params);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let fine = FD_STEP / 10.0;
            params[name].data_mut()[i] += FD_STEP + fine;
            let fine_up = eval(&params);
            params[name].data_mut()[i] -= 2.0 * fine;
            let fine_down = eval(&params);
            if rel_err(numeric, (fine_up - fine_down) / (2.0 * fine)) > KINK_GAP {
                kinks += 1;
                continue;
            }
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    (worst, kinks)
}
