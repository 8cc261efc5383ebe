//! Differentiable primitives for the fixed CNN.
//!
//! Activations are channels-last (`H×W×C`). Convolution kernels use the
//! training layout `[ky, kx, in_channel, filter]` and are always 3×3 with
//! stride 1 and no padding. Arithmetic is f32 except the dense layer's long
//! dot products, which accumulate in f64 so the result does not depend on
//! summation order.

use crate::tensor::{Result, Tensor, TensorError};

pub const KERNEL: usize = 3;

fn conv_dims(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    input.expect_shape("conv2d", &[("height", None), ("width", None), ("channels", None)])?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    kernels.expect_shape(
        "conv2d",
        &[
            ("kernel_y", Some(KERNEL)),
            ("kernel_x", Some(KERNEL)),
            ("channels", Some(c)),
            ("filters", None),
        ],
    )?;
    let f = kernels.shape()[3];
    bias.expect_shape("conv2d", &[("filters", Some(f))])?;
    if h < KERNEL {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            axis: "height",
            expected: KERNEL,
            actual: h,
        });
    }
    if w < KERNEL {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            axis: "width",
            expected: KERNEL,
            actual: w,
        });
    }
    Ok((h, w, c, f))
}

/// Valid 3×3 convolution: `H×W×C` → `(H-2)×(W-2)×F`.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (h, w, c, f) = conv_dims(input, kernels, bias)?;
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let src = input.data();
    let k = kernels.data();
    let mut out = vec![0.0f32; oh * ow * f];
    for y in 0..oh {
        for x in 0..ow {
            let cell = &mut out[(y * ow + x) * f..(y * ow + x + 1) * f];
            cell.copy_from_slice(bias.data());
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let in_base = ((y + ky) * w + (x + kx)) * c;
                    let k_base = (ky * KERNEL + kx) * c * f;
                    for ic in 0..c {
                        let v = src[in_base + ic];
                        let row = &k[k_base + ic * f..k_base + (ic + 1) * f];
                        for (o, kv) in cell.iter_mut().zip(row) {
                            *o += v * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op("conv2d_forward", &[oh, ow, f], out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Adjoint of [`conv2d_forward`]. Returns `(grad_input, grad_kernels, grad_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv2d_backward_opt(input, kernels, grad_out, true)?;
    Ok((g.input.expect("requested"), g.kernels, g.bias))
}

/// Same as [`conv2d_backward`] but skips the input gradient when it is not
/// needed (first layer).
pub fn conv2d_backward_opt(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    // bias plays no part in the adjoint; a placeholder of the right length
    // lets the shared shape check run
    let f = kernels.shape().get(3).copied().unwrap_or(1);
    let (h, w, c, f) = conv_dims(input, kernels, &Tensor::zeros(&[f]))?;
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    grad_out.expect_shape(
        "conv2d_backward",
        &[("height", Some(oh)), ("width", Some(ow)), ("filters", Some(f))],
    )?;
    let src = input.data();
    let k = kernels.data();
    let go = grad_out.data();
    let mut gk = vec![0.0f32; k.len()];
    let mut gb = vec![0.0f32; f];
    let mut gi = if want_input { vec![0.0f32; src.len()] } else { Vec::new() };
    for y in 0..oh {
        for x in 0..ow {
            let g = &go[(y * ow + x) * f..(y * ow + x + 1) * f];
            for (b, gv) in gb.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let in_base = ((y + ky) * w + (x + kx)) * c;
                    let k_base = (ky * KERNEL + kx) * c * f;
                    for ic in 0..c {
                        let v = src[in_base + ic];
                        let row = k_base + ic * f;
                        let gk_row = &mut gk[row..row + f];
                        for (dst, gv) in gk_row.iter_mut().zip(g) {
                            *dst += v * gv;
                        }
                        if want_input {
                            let mut acc = 0.0f32;
                            for (kv, gv) in k[row..row + f].iter().zip(g) {
                                acc += kv * gv;
                            }
                            gi[in_base + ic] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: if want_input {
            Some(Tensor::from_op("conv2d_backward", input.shape(), gi)?)
        } else {
            None
        },
        kernels: Tensor::from_op("conv2d_backward", kernels.shape(), gk)?,
        bias: Tensor::from_op("conv2d_backward", &[f], gb)?,
    })
}

/// Elementwise `max(x, alpha·x)` for `alpha` in (0, 1).
pub fn leaky_relu(x: &Tensor, alpha: f32) -> Tensor {
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { alpha * v }).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Slope is 1 where `x > 0` and `alpha` otherwise, including `x == 0`.
pub fn leaky_relu_backward(x: &Tensor, grad_out: &Tensor, alpha: f32) -> Tensor {
    assert_eq!(x.shape(), grad_out.shape());
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { alpha * g })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Non-overlapping 2×2 max-pool, stride 2. Odd trailing rows/columns are
/// dropped. Returns the pooled tensor and, for each output element, the flat
/// index of the winning input element (first maximum in row-major window order).
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    input.expect_shape("maxpool2x2", &[("height", None), ("width", None), ("channels", None)])?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool2x2",
            axis: if oh == 0 { "height" } else { "width" },
            expected: 2,
            actual: h.min(w),
        });
    }
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * y) * w + 2 * x) * c + ch;
                let mut best = src[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    if src[idx] > best {
                        best = src[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::from_op("maxpool2x2", &[oh, ow, c], out)?, argmax))
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool2x2_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    assert_eq!(grad_out.len(), argmax.len());
    let mut grad = Tensor::zeros(input_shape);
    let dst = grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dst[idx] += g;
    }
    grad
}

/// `logits[k] = bias[k] + Σ_n input[n]·weights[n,k]`. The input may have any
/// shape; it is read in its row-major flatten order.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    weights.expect_shape("dense", &[("inputs", Some(input.len())), ("outputs", None)])?;
    let k = weights.shape()[1];
    bias.expect_shape("dense", &[("outputs", Some(k))])?;
    let mut acc: Vec<f64> = bias.data().iter().map(|&b| b as f64).collect();
    for (n, &v) in input.data().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (o, &wv) in acc.iter_mut().zip(&weights.data()[n * k..(n + 1) * k]) {
            *o += v as f64 * wv as f64;
        }
    }
    Tensor::from_op("dense_forward", &[k], acc.into_iter().map(|v| v as f32).collect())
}

/// Returns `(grad_input, grad_weights, grad_bias)`; `grad_input` has the
/// input's shape.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    weights.expect_shape("dense_backward", &[("inputs", Some(input.len())), ("outputs", None)])?;
    let k = weights.shape()[1];
    grad_out.expect_shape("dense_backward", &[("outputs", Some(k))])?;
    let g = grad_out.data();
    let w = weights.data();
    let mut gi = vec![0.0f32; input.len()];
    let mut gw = vec![0.0f32; w.len()];
    for (n, &v) in input.data().iter().enumerate() {
        let row = &w[n * k..(n + 1) * k];
        gi[n] = row.iter().zip(g).map(|(a, b)| a * b).sum();
        for (dst, gv) in gw[n * k..(n + 1) * k].iter_mut().zip(g) {
            *dst = v * gv;
        }
    }
    Ok((
        Tensor::from_op("dense_backward", input.shape(), gi)?,
        Tensor::from_op("dense_backward", weights.shape(), gw)?,
        grad_out.clone(),
    ))
}

/// Numerically stable softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: f32 = exps.iter().sum();
    Tensor::new(logits.shape(), exps.into_iter().map(|e| e / total).collect()).expect("finite")
}

/// Cross-entropy of `softmax(logits)` against `label`.
/// Returns `(loss, grad_logits, probs)` with `grad_logits = probs - one_hot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f32, Tensor, Tensor)> {
    logits.expect_shape("softmax_cross_entropy", &[("classes", None)])?;
    let k = logits.len();
    if label >= k {
        return Err(TensorError::LabelOutOfRange { label, classes: k });
    }
    let max = logits.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let shifted: Vec<f32> = logits.data().iter().map(|&v| v - max).collect();
    let log_sum = shifted.iter().map(|v| v.exp()).sum::<f32>().ln();
    let loss = log_sum - shifted[label];
    let probs: Vec<f32> = shifted.iter().map(|v| (v - log_sum).exp()).collect();
    let mut grad = probs.clone();
    grad[label] -= 1.0;
    Ok((
        loss,
        Tensor::from_op("softmax_cross_entropy", &[k], grad)?,
        Tensor::from_op("softmax_cross_entropy", &[k], probs)?,
    ))
}
