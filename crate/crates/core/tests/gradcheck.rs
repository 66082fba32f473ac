//! Backpropagated gradients against central differences, in f64.

mod common;

use common::{checked_error, gradient_error, project, random_tensor};
use fragnet::net::{tuned, Model, ModelSpec};
use fragnet::tensor::{Graph, Precision, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

fn tol() -> f64 {
    Precision::Verification.gradient_tolerance()
}

fn bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen()).collect()
}

fn assert_op<F>(name: &str, make: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, F))
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, build) = make(&mut rng);
        let err = gradient_error(&params, build, None, tol());
        assert!(err < tol(), "{name}, seed {seed}: relative error {err:e}");
    }
}

#[test]
fn leaky_relu() {
    assert_op("leaky_relu", |rng| {
        let x = random_tensor(rng, &[3, 7], 1.0);
        let seed = rng.gen();
        (vec![x], move |g: &mut Graph<f64>, p: &[Var]| {
            let y = g.leaky_relu(p[0], 0.3).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn conv1d_all_strides() {
    for stride in [1, 2, 3] {
        assert_op("conv1d", |rng| {
            let x = random_tensor(rng, &[2, 11, 3], 1.0);
            let k = random_tensor(rng, &[4, 3, 3], 0.5);
            let b = random_tensor(rng, &[4], 0.5);
            let seed = rng.gen();
            (vec![x, k, b], move |g: &mut Graph<f64>, p: &[Var]| {
                let y = g.conv1d(p[0], p[1], p[2], stride).unwrap();
                project(g, y, seed)
            })
        });
    }
}

#[test]
fn conv2d() {
    assert_op("conv2d", |rng| {
        let x = random_tensor(rng, &[2, 6, 5, 2], 1.0);
        let k = random_tensor(rng, &[3, 3, 2, 2], 0.5);
        let b = random_tensor(rng, &[3], 0.5);
        let seed = rng.gen();
        (vec![x, k, b], move |g: &mut Graph<f64>, p: &[Var]| {
            let y = g.conv2d(p[0], p[1], p[2]).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn max_pool1d() {
    assert_op("max_pool1d", |rng| {
        let x = random_tensor(rng, &[2, 13, 3], 1.0);
        let seed = rng.gen();
        (vec![x], move |g: &mut Graph<f64>, p: &[Var]| {
            let y = g.max_pool1d(p[0], 4).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn global_avg_pool() {
    assert_op("global_avg_pool", |rng| {
        let x = random_tensor(rng, &[3, 9, 4], 1.0);
        let seed = rng.gen();
        (vec![x], move |g: &mut Graph<f64>, p: &[Var]| {
            let y = g.global_avg_pool(p[0]).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn dense() {
    assert_op("dense", |rng| {
        let x = random_tensor(rng, &[4, 6], 1.0);
        let w = random_tensor(rng, &[5, 6], 0.5);
        let b = random_tensor(rng, &[5], 0.5);
        let seed = rng.gen();
        (vec![x, w, b], move |g: &mut Graph<f64>, p: &[Var]| {
            let y = g.dense(p[0], p[1], p[2]).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn embedding() {
    assert_op("embedding", |rng| {
        let table = random_tensor(rng, &[256, 3], 0.5);
        // Few distinct bytes so rows receive accumulated gradients.
        let idx: Vec<u8> = (0..12).map(|_| rng.gen_range(0..4)).collect();
        let seed = rng.gen();
        (vec![table], move |g: &mut Graph<f64>, p: &[Var]| {
            let y = g.embedding(p[0], &idx, &[2, 6]).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn fused_embedding_convolution() {
    for stride in [1, 2] {
        assert_op("embed_conv1d", |rng| {
            let table = random_tensor(rng, &[256, 3], 0.5);
            let k = random_tensor(rng, &[4, 3, 3], 0.5);
            let b = random_tensor(rng, &[4], 0.5);
            let idx: Vec<u8> = (0..20).map(|_| rng.gen_range(0..6)).collect();
            let seed = rng.gen();
            (vec![table, k, b], move |g: &mut Graph<f64>, p: &[Var]| {
                let y = g.embed_conv1d(p[0], p[1], p[2], &idx, &[2, 10], stride).unwrap();
                project(g, y, seed)
            })
        });
    }
}

#[test]
fn dropout_with_fixed_mask() {
    assert_op("dropout", |rng| {
        let x = random_tensor(rng, &[4, 8], 1.0);
        let seed: u64 = rng.gen();
        (vec![x], move |g: &mut Graph<f64>, p: &[Var]| {
            // Same generator state on every evaluation, so the mask is fixed.
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            let y = g.dropout(p[0], 0.4, &mut mask_rng).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn reshape() {
    assert_op("reshape", |rng| {
        let x = random_tensor(rng, &[2, 3, 4], 1.0);
        let seed = rng.gen();
        (vec![x], move |g: &mut Graph<f64>, p: &[Var]| {
            let y = g.reshape(p[0], &[6, 4]).unwrap();
            let y = g.leaky_relu(y, 0.3).unwrap();
            project(g, y, seed)
        })
    });
}

#[test]
fn softmax_cross_entropy() {
    assert_op("softmax_cross_entropy", |rng| {
        let logits = random_tensor(rng, &[5, 4], 3.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
        (vec![logits], move |g: &mut Graph<f64>, p: &[Var]| {
            g.softmax_cross_entropy(p[0], &labels).unwrap().0
        })
    });
}

#[test]
fn chained_ops() {
    assert_op("chain", |rng| {
        let table = random_tensor(rng, &[256, 4], 0.5);
        let k1 = random_tensor(rng, &[5, 3, 4], 0.5);
        let b1 = random_tensor(rng, &[5], 0.1);
        let w = random_tensor(rng, &[3, 5], 0.5);
        let b = random_tensor(rng, &[3], 0.1);
        let idx = bytes(rng, 2 * 16);
        let labels = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
        (vec![table, k1, b1, w, b], move |g: &mut Graph<f64>, p: &[Var]| {
            let e = g.embedding(p[0], &idx, &[2, 16]).unwrap();
            let c = g.conv1d(e, p[1], p[2], 1).unwrap();
            let a = g.leaky_relu(c, 0.3).unwrap();
            let m = g.max_pool1d(a, 2).unwrap();
            let v = g.global_avg_pool(m).unwrap();
            let o = g.dense(v, p[3], p[4]).unwrap();
            g.softmax_cross_entropy(o, &labels).unwrap().0
        })
    });
}

/// Full-network check through `Model::loss_and_grads`, sampling
/// `per_tensor` entries of every parameter tensor.
fn model_gradient_error(model: &Model<f64>, blocks: &[&[u8]], labels: &[usize], seed: u64, per_tensor: usize) -> f64 {
    let rng = || ChaCha8Rng::seed_from_u64(seed);
    let (_, _, grads) = model.loss_and_grads(blocks, labels, true, &mut rng()).unwrap();
    let mut worst: f64 = 0.0;
    let mut work = model.clone();
    for (t, p) in model.params().iter().enumerate() {
        let mut pick = ChaCha8Rng::seed_from_u64(seed + t as u64);
        for _ in 0..per_tensor.min(p.len()) {
            let i = pick.gen_range(0..p.len());
            let orig = p.values()[i];
            let err = checked_error(grads[t][i], orig, tol(), |v| {
                work.params_mut()[t].values_mut()[i] = v;
                work.loss(blocks, labels, true, &mut rng()).unwrap()
            });
            work.params_mut()[t].values_mut()[i] = orig;
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn small_model_fused_and_unfused() {
    let spec = ModelSpec::from_notation(
        "E (8) - C1D (6, 5) - MP (2) - C1D (6, 3) - AP - D (0.2) - F (10) - F (3)",
        64,
    )
    .unwrap();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<u8>> = (0..4).map(|_| bytes(&mut rng, 64)).collect();
        let blocks: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let mut model = Model::<f64>::init(&spec, seed).unwrap();
        for fused in [true, false] {
            model.set_fused_embedding(fused);
            let err = model_gradient_error(&model, &blocks, &labels, seed, 12);
            assert!(err < tol(), "seed {seed}, fused {fused}: {err:e}");
        }
    }
}

#[test]
fn jpeg_vs_other_model() {
    let spec = tuned(5, 512).unwrap().spec().unwrap();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let data: Vec<Vec<u8>> = (0..3).map(|_| bytes(&mut rng, 512)).collect();
        let blocks: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
        let labels = [0, 1, 1];
        let model = Model::<f64>::init(&spec, seed).unwrap();
        let err = model_gradient_error(&model, &blocks, &labels, seed, 3);
        assert!(err < tol(), "seed {seed}: {err:e}");
    }
}
