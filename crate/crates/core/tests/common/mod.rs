//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except to build inputs.

#![allow(dead_code)]

use std::io::Write;

use fragnet::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Retry step for entries whose first difference straddles a kink
/// (LeakyReLU at zero, a max-pool switch).
pub const FD_RETRY_STEP: f64 = 1e-6;

/// Relative error of `analytic` against a central difference of `f` around
/// `x`. When that disagrees, the retry step is tried centrally and on each
/// side: at a kink the tape returns the derivative of one side.
pub fn checked_error(analytic: f64, x: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let first = rel_err(analytic, (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP));
    if first < tol {
        return first;
    }
    let h = FD_RETRY_STEP;
    let (up, mid, down) = (f(x + h), f(x), f(x - h));
    [(up - down) / (2.0 * h), (up - mid) / h, (mid - down) / h]
        .into_iter()
        .map(|n| rel_err(analytic, n))
        .fold(f64::INFINITY, f64::min)
}

/// Gradients smaller than this are compared absolutely rather than
/// relatively.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape, v).unwrap()
}

/// Reduces any node to a scalar by a fixed random linear functional, so
/// that every output element influences the checked loss differently.
pub fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let flat = g.reshape(y, &[1, n]).unwrap();
    let w = g.input(random_tensor(&mut rng, &[1, n], 1.0));
    let b = g.input(Tensor::zeros(&[1]).unwrap());
    let s = g.dense(flat, w, b).unwrap();
    g.reshape(s, &[1]).unwrap()
}

/// Largest relative error between backpropagated gradients and central
/// differences over every element of every parameter (or `max_per_tensor`
/// evenly spread elements when given).
pub fn gradient_error<F>(params: &[Tensor<f64>], build: F, max_per_tensor: Option<usize>, tol: f64) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).values()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (t, p) in params.iter().enumerate() {
        let picks: Vec<usize> = match max_per_tensor {
            Some(k) if k < p.len() => (0..k).map(|i| i * p.len() / k + (p.len() / k) / 2).collect(),
            _ => (0..p.len()).collect(),
        };
        for i in picks {
            let orig = p.values()[i];
            let err = checked_error(grads[t][i], orig, tol, |v| {
                work[t].values_mut()[i] = v;
                eval(&work)
            });
            work[t].values_mut()[i] = orig;
            worst = worst.max(err);
        }
    }
    worst
}

/// The fourteen statistics computed straight from their definitions, byte by
/// byte, in `FeatureVector::NAMES` order.
pub fn brute_force_features(block: &[u8]) -> [f64; 14] {
    let n = block.len() as f64;
    let mean = block.iter().map(|&b| b as f64).sum::<f64>() / n;
    let geometric = if block.contains(&0) {
        0.0
    } else {
        (block.iter().map(|&b| (b as f64).ln()).sum::<f64>() / n).exp()
    };
    let harmonic = if block.contains(&0) {
        0.0
    } else {
        n / block.iter().map(|&b| 1.0 / b as f64).sum::<f64>()
    };
    let moment = |k: i32| block.iter().map(|&b| (b as f64 - mean).powi(k)).sum::<f64>() / n;
    let var = moment(2);
    let std = var.sqrt();
    let mad = block.iter().map(|&b| (b as f64 - mean).abs()).sum::<f64>() / n;
    let mut bits = 0u64;
    for &b in block {
        for i in 0..8 {
            bits += ((b >> i) & 1) as u64;
        }
    }
    let hamming = bits as f64 / (8.0 * n);
    let (skew, kurt) = if var == 0.0 {
        (0.0, 0.0)
    } else {
        (moment(3) / var.powf(1.5), moment(4) / (var * var) - 3.0)
    };
    let mut streak = 1;
    let mut run = 1;
    for w in block.windows(2) {
        run = if w[0] == w[1] { run + 1 } else { 1 };
        streak = streak.max(run);
    }
    let frac = |lo: u8, hi: u8| block.iter().filter(|&&b| b >= lo && b <= hi).count() as f64 / n;
    let mut counts = std::collections::BTreeMap::new();
    for &b in block {
        *counts.entry(b).or_insert(0usize) += 1;
    }
    let entropy: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    let mut enc = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::new(6));
    enc.write_all(block).unwrap();
    let packed = enc.finish().unwrap().len() as f64;
    let proxy = (1.0 - packed / n).clamp(-1.0, 1.0);
    [
        proxy,
        mean,
        geometric,
        harmonic,
        std,
        mad,
        hamming,
        kurt,
        skew,
        streak as f64,
        frac(0x00, 0x1F),
        frac(0x20, 0x7F),
        frac(0x80, 0xFF),
        entropy,
    ]
}

/// 128×128 pooled co-occurrence computed from explicit pair loops.
pub fn brute_force_pooled(block: &[u8]) -> Vec<f64> {
    let mut counts = vec![vec![0u32; 256]; 256];
    for k in 0..block.len() - 1 {
        counts[block[k] as usize][block[k + 1] as usize] += 1;
    }
    let mut pooled = vec![0.0; 128 * 128];
    for i in 0..128 {
        for j in 0..128 {
            let mut s = 0u32;
            for di in 0..2 {
                for dj in 0..2 {
                    s += counts[2 * i + di][2 * j + dj];
                }
            }
            pooled[i * 128 + j] = s as f64 / 4.0;
        }
    }
    pooled
}

/// Relative comparison with an absolute floor for values at zero.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

/// Blocks from several distributions so every feature branch is exercised:
/// uniform bytes, bytes without zeros, small alphabets, text and constants.
pub fn varied_block(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    match rng.gen_range(0..6) {
        0 => (0..len).map(|_| rng.gen()).collect(),
        1 => (0..len).map(|_| rng.gen_range(1..=255)).collect(),
        2 => {
            let k = rng.gen_range(2..8);
            let alphabet: Vec<u8> = (0..k).map(|_| rng.gen()).collect();
            (0..len).map(|_| alphabet[rng.gen_range(0..k)]).collect()
        }
        3 => (0..len).map(|_| rng.gen_range(0x20..0x7F)).collect(),
        4 => {
            let mut v = Vec::with_capacity(len);
            while v.len() < len {
                let byte: u8 = rng.gen();
                let run = rng.gen_range(1..40);
                v.extend(std::iter::repeat_n(byte, run));
            }
            v.truncate(len);
            v
        }
        _ => vec![rng.gen(); len],
    }
}
