//! Index permutations between the training layout and the device loop order.
//!
//! | array | training            | device            |
//! |-------|---------------------|-------------------|
//! | conv1 | `[ky, kx, ic, f]`   | `[f, ky, kx, ic]` |
//! | conv2 | `[ky, kx, ic, f]`   | `[f, ic, ky, kx]` |
//! | dense | `[flat, cls]`       | `[cls, f, y, x]`  |
//!
//! with `flat = (y·W + x)·F + f`.

use super::CodecError;
use crate::tensor::Tensor;

fn dims4(w: &Tensor, what: &'static str) -> Result<[usize; 4], CodecError> {
    match *w.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(CodecError::Layout(format!(
            "{what}: expected rank 4 [ky, kx, ic, f], got shape {:?}",
            w.shape()
        ))),
    }
}

fn check_len(data: &[f32], expected: usize, what: &'static str) -> Result<(), CodecError> {
    if data.len() != expected {
        return Err(CodecError::Layout(format!(
            "{what}: expected {expected} values, got {}",
            data.len()
        )));
    }
    Ok(())
}

/// `[ky, kx, ic, f]` → `[f, ky, kx, ic]`.
pub fn conv1_to_device(w: &Tensor) -> Result<Vec<f32>, CodecError> {
    let [kh, kw, ic, f] = dims4(w, "conv1")?;
    let src = w.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..kh {
        for x in 0..kw {
            for c in 0..ic {
                for fi in 0..f {
                    out[((fi * kh + y) * kw + x) * ic + c] = src[((y * kw + x) * ic + c) * f + fi];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`conv1_to_device`]; `dims` is the training shape `[ky, kx, ic, f]`.
pub fn conv1_from_device(data: &[f32], dims: [usize; 4]) -> Result<Tensor, CodecError> {
    let [kh, kw, ic, f] = dims;
    check_len(data, kh * kw * ic * f, "conv1")?;
    let mut out = vec![0.0; data.len()];
    for y in 0..kh {
        for x in 0..kw {
            for c in 0..ic {
                for fi in 0..f {
                    out[((y * kw + x) * ic + c) * f + fi] = data[((fi * kh + y) * kw + x) * ic + c];
                }
            }
        }
    }
    Ok(Tensor::new(&dims, out)?)
}

/// `[ky, kx, ic, f]` → `[f, ic, ky, kx]`.
pub fn conv2_to_device(w: &Tensor) -> Result<Vec<f32>, CodecError> {
    let [kh, kw, ic, f] = dims4(w, "conv2")?;
    let src = w.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..kh {
        for x in 0..kw {
            for c in 0..ic {
                for fi in 0..f {
                    out[((fi * ic + c) * kh + y) * kw + x] = src[((y * kw + x) * ic + c) * f + fi];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`conv2_to_device`].
pub fn conv2_from_device(data: &[f32], dims: [usize; 4]) -> Result<Tensor, CodecError> {
    let [kh, kw, ic, f] = dims;
    check_len(data, kh * kw * ic * f, "conv2")?;
    let mut out = vec![0.0; data.len()];
    for y in 0..kh {
        for x in 0..kw {
            for c in 0..ic {
                for fi in 0..f {
                    out[((y * kw + x) * ic + c) * f + fi] = data[((fi * ic + c) * kh + y) * kw + x];
                }
            }
        }
    }
    Ok(Tensor::new(&dims, out)?)
}

/// `[flat, cls]` → `[cls, f, y, x]` for a flatten of `(h, w, f)` channels-last.
pub fn dense_to_device(w: &Tensor, (h, wd, f): (usize, usize, usize)) -> Result<Vec<f32>, CodecError> {
    let [flat, classes] = match *w.shape() {
        [a, b] => [a, b],
        _ => {
            return Err(CodecError::Layout(format!(
                "dense: expected rank 2 [flat, cls], got {:?}",
                w.shape()
            )))
        }
    };
    if flat != h * wd * f {
        return Err(CodecError::Layout(format!(
            "dense: flat length {flat} is not {h}×{wd}×{f}"
        )));
    }
    let src = w.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..wd {
            for fi in 0..f {
                let t = (y * wd + x) * f + fi;
                for cls in 0..classes {
                    out[cls * flat + (fi * h + y) * wd + x] = src[t * classes + cls];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`dense_to_device`].
pub fn dense_from_device(
    data: &[f32],
    (h, wd, f): (usize, usize, usize),
    classes: usize,
) -> Result<Tensor, CodecError> {
    let flat = h * wd * f;
    check_len(data, flat * classes, "dense")?;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..wd {
            for fi in 0..f {
                let t = (y * wd + x) * f + fi;
                for cls in 0..classes {
                    out[t * classes + cls] = data[cls * flat + (fi * h + y) * wd + x];
                }
            }
        }
    }
    Ok(Tensor::new(&[flat, classes], out)?)
}
