//! Reference inference over device-layout arrays, using the loop order of
//! the embedded firmware (channel-first activations). Used to check that the
//! exported layouts compute the same function as the training layout.

use super::bin::WeightBundle;
use super::CodecError;
use crate::model::LEAKY_ALPHA;
use crate::tensor::Tensor;

fn leaky(v: f32) -> f32 {
    if v > 0.0 {
        v
    } else {
        LEAKY_ALPHA * v
    }
}

/// Class probabilities for an `S×S×C` image.
pub fn device_forward(bundle: &WeightBundle, image: &Tensor) -> Result<Vec<f32>, CodecError> {
    let m = &bundle.meta;
    m.validate()?;
    let spec = m.spec();
    let (s, c) = (spec.input_size, spec.channels);
    if image.shape() != [s, s, c] {
        return Err(CodecError::Layout(format!(
            "image shape {:?} does not match {s}×{s}×{c}",
            image.shape()
        )));
    }
    let px = image.data();

    // conv1: weights [f][ky][kx][ic], output [f][y][x]
    let o1 = s - 2;
    let mut conv1 = vec![0.0f32; spec.f1 * o1 * o1];
    for f in 0..spec.f1 {
        for y in 0..o1 {
            for x in 0..o1 {
                let mut acc = bundle.conv1_bias[f];
                for ky in 0..3 {
                    for kx in 0..3 {
                        for ic in 0..c {
                            acc += px[((y + ky) * s + (x + kx)) * c + ic]
                                * bundle.conv1[((f * 3 + ky) * 3 + kx) * c + ic];
                        }
                    }
                }
                conv1[(f * o1 + y) * o1 + x] = leaky(acc);
            }
        }
    }

    let p = o1 / 2;
    let mut pool = vec![0.0f32; spec.f1 * p * p];
    for f in 0..spec.f1 {
        for y in 0..p {
            for x in 0..p {
                let at = |dy: usize, dx: usize| conv1[(f * o1 + 2 * y + dy) * o1 + 2 * x + dx];
                pool[(f * p + y) * p + x] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }

    // conv2: weights [f][ic][ky][kx], output [f][y][x]
    let o2 = p - 2;
    let mut conv2 = vec![0.0f32; spec.f2 * o2 * o2];
    for f in 0..spec.f2 {
        for y in 0..o2 {
            for x in 0..o2 {
                let mut acc = bundle.conv2_bias[f];
                for ic in 0..spec.f1 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            acc += pool[(ic * p + y + ky) * p + x + kx]
                                * bundle.conv2[((f * spec.f1 + ic) * 3 + ky) * 3 + kx];
                        }
                    }
                }
                conv2[(f * o2 + y) * o2 + x] = leaky(acc);
            }
        }
    }

    // dense: weights [cls][f][y][x] against the channel-first activation
    let flat = conv2.len();
    let logits: Vec<f32> = (0..spec.num_classes)
        .map(|cls| {
            let dot: f64 = conv2
                .iter()
                .zip(&bundle.dense[cls * flat..(cls + 1) * flat])
                .map(|(&a, &w)| a as f64 * w as f64)
                .sum();
            (dot + bundle.dense_bias[cls] as f64) as f32
        })
        .collect();
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f32 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
