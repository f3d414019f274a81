//! Reference implementations shared by the integration tests. Nothing here
//! calls into the crate's inference code.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use seufi::model_io::{load_dataset, load_model};
use seufi::{LabeledDataset, Network};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load_fixture(stem: &str) -> (Network, LabeledDataset) {
    let network = load_model(fixture(&format!("{stem}.manifest")), fixture(&format!("{stem}.bin"))).unwrap();
    let dataset = load_dataset(fixture(&format!("{stem}.dataset"))).unwrap();
    (network, dataset)
}

/// Closed-form and oracle values agree within 1e-5 relative, or 1e-7
/// absolute when both are below 1e-2 in magnitude.
pub fn close(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    if scale < 1e-2 {
        (a - b).abs() <= 1e-7
    } else {
        (a - b).abs() <= 1e-5 * scale
    }
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// `O_j = b_j + sum_i I_i w[i][j]` in f64, `w` row-major `[in][out]`.
pub fn fc_f64(input: &[f64], w: &[f32], b: Option<&[f32]>, out: usize) -> Vec<f64> {
    (0..out)
        .map(|j| {
            let mut acc = b.map_or(0.0, |b| b[j] as f64);
            for (i, x) in input.iter().enumerate() {
                acc += x * w[i * out + j] as f64;
            }
            acc
        })
        .collect()
}

pub fn chain_f64(dims: &[usize], weights: &[Vec<f32>], input: &[f32]) -> Vec<f64> {
    let mut a: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    for (l, w) in weights.iter().enumerate() {
        a = fc_f64(&a, w, None, dims[l + 1]);
    }
    a
}

#[derive(Clone, Debug)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[cout][cin][k][k]`
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl ConvSpec {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }
}

/// Direct zero-padded cross-correlation in f64 over `[c][h][w]` data.
pub fn conv_f64(s: &ConvSpec, x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = s.out_hw(h, w);
    let mut out = vec![0.0; s.cout * oh * ow];
    for q in 0..s.cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = s.b[q] as f64;
                for p in 0..s.cin {
                    for r in 0..s.k {
                        for c in 0..s.k {
                            let iy = (y * s.stride + r) as isize - s.pad as isize;
                            let ix = (xx * s.stride + c) as isize - s.pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wv = s.w[((q * s.cin + p) * s.k + r) * s.k + c] as f64;
                            acc += wv * x[(p * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(q * oh + y) * ow + xx] = acc;
            }
        }
    }
    (out, oh, ow)
}

pub fn stack_f64(stack: &[ConvSpec], input: &[f32], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let (mut h, mut w) = (h, w);
    for s in stack {
        let (o, oh, ow) = conv_f64(s, &x, h, w);
        x = o;
        h = oh;
        w = ow;
    }
    (x, h, w)
}

/// Arg-max with ties to the lowest index; any NaN makes the prediction wrong.
pub fn oracle_correct(logits: &[f32], label: usize) -> bool {
    if logits.iter().any(|v| v.is_nan()) {
        return false;
    }
    let mut best = 0;
    for i in 1..logits.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best == label
}

/// Fully connected layer in f32, inputs summed in ascending order, bias last.
pub fn fc_f32(input: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
    let out = b.len();
    (0..out)
        .map(|j| {
            let mut acc = 0.0f32;
            for (i, x) in input.iter().enumerate() {
                acc += x * w[i * out + j];
            }
            acc + b[j]
        })
        .collect()
}

/// Accuracy of a 4-8-3 ReLU perceptron given as a flat canonical parameter
/// list `[w1 (32), b1 (8), w2 (24), b2 (3)]`.
pub fn mlp_accuracy(params: &[f32], dataset: &LabeledDataset) -> f64 {
    let (w1, rest) = params.split_at(32);
    let (b1, rest) = rest.split_at(8);
    let (w2, b2) = rest.split_at(24);
    let mut correct = 0;
    for (x, label) in dataset.samples().iter().zip(dataset.labels()) {
        let h: Vec<f32> = fc_f32(x.data(), w1, b1)
            .into_iter()
            .map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
            .collect();
        if oracle_correct(&fc_f32(&h, w2, b2), *label as usize) {
            correct += 1;
        }
    }
    correct as f64 / dataset.len() as f64
}

/// Flat parameter list of a network, canonical order.
pub fn flat_params(network: &Network) -> Vec<f32> {
    network
        .params()
        .iter()
        .flat_map(|p| p.weights.iter().chain(&p.biases).copied())
        .collect()
}
