//! Independent f64 reference implementation of the network, written with
//! plain nested loops over the training layout. Used as an oracle for the
//! f32 engine.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyvis_core::model::{ModelSpec, ModelWeights};
use tinyvis_core::Tensor;

pub const ALPHA: f64 = 0.1;

/// Loss plus the discrete choices the pass made (signs of every
/// pre-activation, argmax of every pooling window). Two passes with equal
/// signatures lie on the same smooth piece of the loss.
pub struct RefPass {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub signature: Vec<u32>,
}

fn w64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Arrays in training layout as f64: conv1_w, conv1_b, conv2_w, conv2_b,
/// dense_w, dense_b.
pub fn params64(w: &ModelWeights) -> [Vec<f64>; 6] {
    w.tensors().map(w64)
}

/// Valid 3×3 convolution, input `[h][w][c]`, kernel `[ky][kx][c][f]`.
fn conv(input: &[f64], h: usize, w: usize, c: usize, k: &[f64], b: &[f64], f: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h - 2, w - 2);
    let mut out = vec![0.0; oh * ow * f];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..f {
                let mut s = b[o];
                for ky in 0..3 {
                    for kx in 0..3 {
                        for i in 0..c {
                            s += input[((y + ky) * w + x + kx) * c + i] * k[((ky * 3 + kx) * c + i) * f + o];
                        }
                    }
                }
                out[(y * ow + x) * f + o] = s;
            }
        }
    }
    (out, oh, ow)
}

fn leaky(v: &mut [f64], sig: &mut Vec<u32>) {
    for x in v.iter_mut() {
        sig.push(u32::from(*x > 0.0));
        if *x <= 0.0 {
            *x *= ALPHA;
        }
    }
}

pub fn reference_pass(spec: &ModelSpec, p: &[Vec<f64>; 6], image: &[f64], label: usize) -> RefPass {
    let s = spec.input_size;
    let mut sig = Vec::new();
    let (mut a1, h1, w1) = conv(image, s, s, spec.channels, &p[0], &p[1], spec.f1);
    leaky(&mut a1, &mut sig);
    let (ph, pw) = (h1 / 2, w1 / 2);
    let mut pool = vec![0.0; ph * pw * spec.f1];
    for y in 0..ph {
        for x in 0..pw {
            for c in 0..spec.f1 {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (i, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = a1[((2 * y + dy) * w1 + 2 * x + dx) * spec.f1 + c];
                    if v > best {
                        best = v;
                        arg = i as u32;
                    }
                }
                sig.push(arg);
                pool[(y * pw + x) * spec.f1 + c] = best;
            }
        }
    }
    let (mut a2, _, _) = conv(&pool, ph, pw, spec.f1, &p[2], &p[3], spec.f2);
    leaky(&mut a2, &mut sig);
    let k = spec.num_classes;
    let logits: Vec<f64> = (0..k)
        .map(|j| p[5][j] + a2.iter().enumerate().map(|(i, v)| v * p[4][i * k + j]).sum::<f64>())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let probs: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
    RefPass {
        loss: -(probs[label].ln()),
        probs,
        signature: sig,
    }
}

pub fn random_image(spec: &ModelSpec, rng: &mut impl Rng) -> Tensor {
    let s = spec.input_size;
    Tensor::from_fn(&[s, s, spec.channels], |_| rng.gen_range(0.0..1.0))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Outcome of a finite-difference sweep over every parameter.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates where ±h crossed a ReLU or pooling kink.
    pub skipped: usize,
    pub worst_rel: f64,
    /// Worst error per array: conv1_w, conv1_b, conv2_w, conv2_b, dense_w, dense_b.
    pub worst_by_layer: [f64; 6],
}

pub const FD_STEP: f64 = 1e-3;
/// Denominator floor. The engine runs in f32, so a gradient that is a
/// near-cancelling sum of much larger terms carries an absolute error around
/// 1e-8..1e-7; below this magnitude the comparison is effectively absolute.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central differences of the f64 reference loss against the engine's
/// analytic gradients, for every parameter of `weights`.
pub fn gradient_check(weights: &ModelWeights, image: &Tensor, label: usize) -> GradCheck {
    let cache = tinyvis_core::model::forward(weights, image).unwrap();
    let (_, grads) = tinyvis_core::model::backward(weights, &cache, label).unwrap();
    let analytic = grads.tensors().map(w64);
    let base = params64(weights);
    let img: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let mut out = GradCheck::default();
    for layer in 0..6 {
        for i in 0..base[layer].len() {
            let mut plus = base.clone();
            plus[layer][i] += FD_STEP;
            let mut minus = base.clone();
            minus[layer][i] -= FD_STEP;
            let lp = reference_pass(&weights.spec, &plus, &img, label);
            let lm = reference_pass(&weights.spec, &minus, &img, label);
            if lp.signature != lm.signature {
                out.skipped += 1;
                continue;
            }
            let numeric = (lp.loss - lm.loss) / (2.0 * FD_STEP);
            let e = rel_err(analytic[layer][i], numeric);
            out.checked += 1;
            out.worst_rel = out.worst_rel.max(e);
            out.worst_by_layer[layer] = out.worst_by_layer[layer].max(e);
        }
    }
    out
}

/// A small random instance: spec with side 8..=13, random channel count and
/// class count, initialized weights with non-zero biases, image and label.
pub fn random_instance(seed: u64) -> (ModelWeights, Tensor, usize) {
    let mut rng = seeded(seed);
    let spec = ModelSpec::new(rng.gen_range(8..=13), rng.gen_bool(0.5), rng.gen_range(2..=4));
    let mut w = tinyvis_core::model::build_model(spec, seed).unwrap();
    for b in [&mut w.conv1_b, &mut w.conv2_b, &mut w.dense_b] {
        for v in b.data_mut() {
            *v = rng.gen_range(-0.2..0.2);
        }
    }
    let image = random_image(&spec, &mut rng);
    let label = rng.gen_range(0..spec.num_classes);
    (w, image, label)
}
