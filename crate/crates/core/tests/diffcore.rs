//! Adjoint checks for every primitive against central differences, and
//! forward checks against straightforward loop implementations.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssvaerr::diffcore::{finite_diff, max_rel_err, Array, Graph, NodeId};

const TRIALS: u64 = 50;
const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    Array::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero (for kinked primitives).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| {
        let m = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `op`'s output to a scalar with a fixed random weighting so every
/// output coordinate contributes to the checked gradient.
fn weighted_sum(g: &mut Graph, y: NodeId, seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = Array::from_fn(g.shape(y), |_| rng.random_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

/// Checks d/dx of `sum(w ⊙ op(x, extra...))` for every input in `inputs`.
fn check(name: &str, inputs: &[Array], op: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId, seed: u64) {
    let eval = |vals: &[Array]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| g.leaf(v.clone())).collect();
        let y = op(&mut g, &ids);
        let l = weighted_sum(&mut g, y, seed);
        g.value(l).item().unwrap()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| g.leaf(v.clone())).collect();
    let y = op(&mut g, &ids);
    let l = weighted_sum(&mut g, y, seed);
    let grads = g.backward(l).unwrap();
    for (k, id) in ids.iter().enumerate() {
        let numeric = finite_diff(
            |x| {
                let mut vals = inputs.to_vec();
                vals[k] = x.clone();
                eval(&vals)
            },
            &inputs[k],
            H,
        );
        let err = max_rel_err(grads.get(*id).unwrap(), &numeric);
        assert!(err < TOL, "{name}: input {k} rel err {err:e} (seed {seed})");
    }
}

fn run(
    name: &str,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<Array>,
    op: impl Fn(&mut Graph, &[NodeId]) -> NodeId,
) {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        check(name, &inputs, &op, seed);
    }
}

#[test]
fn elementwise_binary_adjoints() {
    let pair =
        |r: &mut ChaCha8Rng| vec![random(r, &[3, 4], -2.0, 2.0), random(r, &[3, 4], -2.0, 2.0)];
    run("add", pair, |g, x| g.add(x[0], x[1]).unwrap());
    run("sub", pair, |g, x| g.sub(x[0], x[1]).unwrap());
    run("mul", pair, |g, x| g.mul(x[0], x[1]).unwrap());
    run(
        "div",
        |r| vec![random(r, &[3, 4], -2.0, 2.0), random(r, &[3, 4], 0.5, 2.0)],
        |g, x| g.div(x[0], x[1]).unwrap(),
    );
    run(
        "mul-scalar-broadcast",
        |r| vec![random(r, &[5], -2.0, 2.0), random(r, &[], -2.0, 2.0)],
        |g, x| g.mul(x[0], x[1]).unwrap(),
    );
    run(
        "div-by-scalar",
        |r| vec![random(r, &[5], -2.0, 2.0), random(r, &[1], 0.5, 2.0)],
        |g, x| g.div(x[0], x[1]).unwrap(),
    );
}

#[test]
fn scalar_op_adjoints() {
    let one = |r: &mut ChaCha8Rng| vec![random(r, &[2, 3], -2.0, 2.0)];
    run("add_scalar", one, |g, x| g.add_scalar(x[0], 1.7));
    run("mul_scalar", one, |g, x| g.mul_scalar(x[0], -0.3));
}

#[test]
fn nonlinearity_adjoints() {
    let one = |r: &mut ChaCha8Rng| vec![random(r, &[7], -3.0, 3.0)];
    run("tanh", one, |g, x| g.tanh(x[0]));
    run("sigmoid", one, |g, x| g.sigmoid(x[0]));
    run("square", one, |g, x| g.square(x[0]));
    run(
        "relu",
        |r| vec![away_from_zero(r, &[7])],
        |g, x| g.relu(x[0]),
    );
    run("abs", |r| vec![away_from_zero(r, &[7])], |g, x| g.abs(x[0]));
    run(
        "log",
        |r| vec![random(r, &[7], 0.05, 3.0)],
        |g, x| g.log(x[0], 1e-12),
    );
}

#[test]
fn softmax_adjoints() {
    let one = |r: &mut ChaCha8Rng| vec![random(r, &[3, 5], -3.0, 3.0)];
    run("softmax", one, |g, x| g.softmax(x[0]));
    run("log_softmax", one, |g, x| g.log_softmax(x[0]));
}

#[test]
fn reduction_adjoints() {
    let one = |r: &mut ChaCha8Rng| vec![random(r, &[2, 3, 4], -2.0, 2.0)];
    run("sum", one, |g, x| g.sum(x[0]));
    run("mean", one, |g, x| g.mean(x[0]));
    for axis in 0..3 {
        run("sum_axis", one, move |g, x| g.sum_axis(x[0], axis).unwrap());
        run("mean_axis", one, move |g, x| {
            g.mean_axis(x[0], axis).unwrap()
        });
    }
}

#[test]
fn structural_adjoints() {
    run(
        "concat",
        |r| {
            vec![
                random(r, &[2, 3, 2], -1.0, 1.0),
                random(r, &[2, 1, 2], -1.0, 1.0),
            ]
        },
        |g, x| g.concat(&[x[0], x[1]], 1).unwrap(),
    );
    run(
        "slice",
        |r| vec![random(r, &[3, 5], -1.0, 1.0)],
        |g, x| g.slice(x[0], 1, 1, 3).unwrap(),
    );
    run(
        "reshape",
        |r| vec![random(r, &[2, 6], -1.0, 1.0)],
        |g, x| g.reshape(x[0], &[3, 4]).unwrap(),
    );
    run(
        "permute",
        |r| vec![random(r, &[2, 3, 4], -1.0, 1.0)],
        |g, x| g.permute(x[0], &[2, 0, 1]).unwrap(),
    );
    run(
        "gather",
        |r| vec![random(r, &[4, 3], -1.0, 1.0)],
        |g, x| g.gather(x[0], &[2, 0, 2, 3]).unwrap(),
    );
}

#[test]
fn l2_normalize_adjoint() {
    run(
        "l2_normalize",
        |r| vec![random(r, &[3, 4], -2.0, 2.0)],
        |g, x| g.l2_normalize(x[0], 1e-12),
    );
}

#[test]
fn affine_adjoint() {
    run(
        "affine",
        |r| {
            vec![
                random(r, &[2, 3, 4], -2.0, 2.0),
                random(r, &[3], -2.0, 2.0),
                random(r, &[3], -2.0, 2.0),
            ]
        },
        |g, x| g.affine(x[0], Some(x[1]), Some(x[2]), 1).unwrap(),
    );
    run(
        "affine-scale-only",
        |r| vec![random(r, &[4, 2], -2.0, 2.0), random(r, &[2], -2.0, 2.0)],
        |g, x| g.affine(x[0], Some(x[1]), None, 1).unwrap(),
    );
}

#[test]
fn matmul_adjoint() {
    run(
        "matmul",
        |r| vec![random(r, &[3, 4], -1.0, 1.0), random(r, &[4, 2], -1.0, 1.0)],
        |g, x| g.matmul(x[0], x[1]).unwrap(),
    );
}

#[test]
fn conv3d_adjoint() {
    run(
        "conv3d",
        |r| {
            vec![
                random(r, &[2, 2, 3, 5, 4], -1.0, 1.0),
                random(r, &[3, 2, 2, 3, 3], -1.0, 1.0),
            ]
        },
        |g, x| g.conv3d(x[0], x[1], [1, 2, 1], [1, 1, 0]).unwrap(),
    );
}

#[test]
fn conv2d_adjoint() {
    run(
        "conv2d",
        |r| {
            vec![
                random(r, &[2, 2, 5, 5], -1.0, 1.0),
                random(r, &[3, 2, 3, 3], -1.0, 1.0),
            ]
        },
        |g, x| g.conv2d(x[0], x[1], [2, 2], [1, 1]).unwrap(),
    );
}

#[test]
fn composed_chain_adjoint() {
    run(
        "chain",
        |r| vec![random(r, &[4, 3], -1.0, 1.0), random(r, &[3, 5], -1.0, 1.0)],
        |g, x| {
            let m = g.matmul(x[0], x[1]).unwrap();
            let t = g.tanh(m);
            let s = g.log_softmax(t);
            let q = g.mul(s, m).unwrap();
            g.mean_axis(q, 0).unwrap()
        },
    );
}

#[test]
fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
    let mut g = Graph::new();
    let logits = g.leaf(Array::zeros(&[20]));
    let ls = g.log_softmax(logits);
    let mut onehot = vec![0.0; 20];
    onehot[0] = 1.0;
    let t = g.constant(Array::from_vec(onehot));
    let p = g.mul(ls, t).unwrap();
    let s = g.sum(p);
    let loss = g.mul_scalar(s, -1.0);
    let grads = g.backward(loss).unwrap();
    let grad = grads.get(logits).unwrap();
    let mut expected = vec![0.05; 20];
    expected[0] = 0.05 - 1.0;
    for (a, b) in grad.data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn backward_is_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.leaf(random(&mut rng, &[1, 2, 4, 9, 9], -1.0, 1.0));
        let k = g.leaf(random(&mut rng, &[4, 2, 3, 3, 3], -1.0, 1.0));
        let y = g.conv3d(x, k, [1, 2, 2], [1, 1, 1]).unwrap();
        let y = g.tanh(y);
        let l = g.mean(y);
        let grads = g.backward(l).unwrap();
        [
            grads.get(x).unwrap().to_le_bytes(),
            grads.get(k).unwrap().to_le_bytes(),
        ]
        .concat()
    };
    assert_eq!(build(), build());
}

// ---- forward references -------------------------------------------------

fn naive_conv3d(
    x: &Array,
    k: &Array,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<usize>, Vec<f64>) {
    let [c, t, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [co, _, kt, kh, kw] = [
        k.shape()[0],
        k.shape()[1],
        k.shape()[2],
        k.shape()[3],
        k.shape()[4],
    ];
    let out = |d: usize, kk: usize, s: usize, p: usize| (d + 2 * p - kk) / s + 1;
    let (to, ho, wo) = (
        out(t, kt, stride[0], pad[0]),
        out(h, kh, stride[1], pad[1]),
        out(w, kw, stride[2], pad[2]),
    );
    let xi = |ci: usize, a: isize, b: isize, cc: isize| -> f64 {
        if a < 0 || b < 0 || cc < 0 || a >= t as isize || b >= h as isize || cc >= w as isize {
            0.0
        } else {
            x.data()[((ci * t + a as usize) * h + b as usize) * w + cc as usize]
        }
    };
    let mut y = Vec::new();
    for o in 0..co {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for a in 0..kt {
                            for b in 0..kh {
                                for cc in 0..kw {
                                    let kv = k.data()[(((o * c + ci) * kt + a) * kh + b) * kw + cc];
                                    s += kv
                                        * xi(
                                            ci,
                                            (ot * stride[0] + a) as isize - pad[0] as isize,
                                            (oh * stride[1] + b) as isize - pad[1] as isize,
                                            (ow * stride[2] + cc) as isize - pad[2] as isize,
                                        );
                                }
                            }
                        }
                    }
                    y.push(s);
                }
            }
        }
    }
    (vec![co, to, ho, wo], y)
}

#[test]
fn conv3d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let xv = random(&mut rng, &[1, 3, 4, 5], -1.0, 1.0);
    let x = g.constant(xv.clone());
    let k = g.constant(Array::full(&[1, 1, 1, 1, 1], 1.0));
    let y = g.conv3d(x, k, [1, 1, 1], [0, 0, 0]).unwrap();
    assert_eq!(g.value(y), &xv);
}

#[test]
fn conv3d_all_ones_sums_to_27() {
    let mut g = Graph::new();
    let x = g.constant(Array::full(&[1, 3, 3, 3], 1.0));
    let k = g.constant(Array::full(&[1, 1, 3, 3, 3], 1.0));
    let y = g.conv3d(x, k, [1, 1, 1], [0, 0, 0]).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[27.0]);
}

#[test]
fn conv3d_matches_six_loop_reference() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(1..6usize);
        let h = rng.random_range(3..12usize);
        let w = rng.random_range(3..12usize);
        let stride = [
            rng.random_range(1..3),
            rng.random_range(1..3),
            rng.random_range(1..3),
        ];
        let kt = rng.random_range(1..=t.min(3));
        let pad = [
            rng.random_range(0..2),
            rng.random_range(0..2),
            rng.random_range(0..2),
        ];
        let xv = random(&mut rng, &[2, t, h, w], -1.0, 1.0);
        let kv = random(&mut rng, &[3, 2, kt, 3, 3], -1.0, 1.0);
        let (shape, expected) = naive_conv3d(&xv, &kv, stride, pad);
        let mut g = Graph::new();
        let x = g.constant(xv);
        let k = g.constant(kv);
        let y = g.conv3d(x, k, stride, pad).unwrap();
        assert_eq!(g.shape(y), shape.as_slice());
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn conv3d_batched_equals_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xv = random(&mut rng, &[3, 2, 4, 7, 7], -1.0, 1.0);
    let kv = random(&mut rng, &[4, 2, 3, 3, 3], -1.0, 1.0);
    let mut g = Graph::new();
    let x = g.constant(xv.clone());
    let k = g.constant(kv.clone());
    let y = g.conv3d(x, k, [1, 2, 2], [1, 1, 1]).unwrap();
    let per = g.value(y).len() / 3;
    for n in 0..3 {
        let sample =
            Array::new(vec![2, 4, 7, 7], xv.data()[n * 392..(n + 1) * 392].to_vec()).unwrap();
        let (_, expected) = naive_conv3d(&sample, &kv, [1, 2, 2], [1, 1, 1]);
        for (a, b) in g.value(y).data()[n * per..(n + 1) * per]
            .iter()
            .zip(&expected)
        {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xv = random(&mut rng, &[2, 2, 6, 5], -1.0, 1.0);
    let kv = random(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let mut g = Graph::new();
    let x = g.constant(xv.clone());
    let k = g.constant(kv.clone());
    let y = g.conv2d(x, k, [2, 1], [1, 1]).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 3, 5]);
    for n in 0..2 {
        let sample =
            Array::new(vec![2, 1, 6, 5], xv.data()[n * 60..(n + 1) * 60].to_vec()).unwrap();
        let k3 = kv.clone().reshape(&[3, 2, 1, 3, 3]).unwrap();
        let (_, expected) = naive_conv3d(&sample, &k3, [1, 2, 1], [0, 1, 1]);
        for (a, b) in g.value(y).data()[n * 45..(n + 1) * 45]
            .iter()
            .zip(&expected)
        {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_shape_mismatch_is_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Array::zeros(&[1, 2, 3, 4, 4]));
    let k = g.constant(Array::zeros(&[1, 3, 1, 3, 3]));
    assert!(g.conv3d(x, k, [1, 1, 1], [0, 0, 0]).is_err());
    let k = g.constant(Array::zeros(&[1, 2, 5, 3, 3]));
    assert!(g.conv3d(x, k, [1, 1, 1], [0, 0, 0]).is_err());
}

#[test]
fn forward_references_for_pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xv = random(&mut rng, &[4, 5], -3.0, 3.0);
    let mut g = Graph::new();
    let x = g.constant(xv.clone());
    let sm = g.softmax(x);
    let lsm = g.log_softmax(x);
    let nrm = g.l2_normalize(x, 1e-12);
    let sa = g.sum_axis(x, 0).unwrap();
    for r in 0..4 {
        let row = &xv.data()[r * 5..(r + 1) * 5];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..5 {
            assert!((g.value(sm).data()[r * 5 + j] - row[j].exp() / z).abs() < 1e-12);
            assert!((g.value(lsm).data()[r * 5 + j] - (row[j] - z.ln())).abs() < 1e-12);
            assert!((g.value(nrm).data()[r * 5 + j] - row[j] / n).abs() < 1e-12);
        }
    }
    for j in 0..5 {
        let s: f64 = (0..4).map(|r| xv.data()[r * 5 + j]).sum();
        assert!((g.value(sa).data()[j] - s).abs() < 1e-12);
    }
}

#[test]
fn softmax_survives_large_logits() {
    let mut g = Graph::new();
    let x = g.constant(Array::from_vec(vec![1000.0, 1000.0, -1000.0]));
    let s = g.softmax(x);
    let v = g.value(s).data();
    assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15 && v[2] == 0.0);
}
