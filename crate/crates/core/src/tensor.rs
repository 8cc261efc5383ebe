//! Dense float32 tensors with an explicit row-major shape.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch on {axis}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: expected rank {expected}, got rank {actual}")]
    Rank {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("shape {shape:?} holds {expected} values but buffer has {actual}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{0}: produced a non-finite value")]
    NonFinite(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Row-major (last axis fastest) float32 array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.contains(&0) {
            return Err(TensorError::Length {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("Tensor::new"));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized axis in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    /// Builds a tensor from a buffer produced by an operation, rejecting
    /// NaN/Inf instead of letting it propagate.
    pub(crate) fn from_op(op: &'static str, shape: &[usize], data: Vec<f32>) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(op));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::Length {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Checks rank and, for each `Some(d)`, the extent of that axis.
    pub(crate) fn expect_shape(
        &self,
        op: &'static str,
        axes: &[(&'static str, Option<usize>)],
    ) -> Result<()> {
        if self.rank() != axes.len() {
            return Err(TensorError::Rank {
                op,
                expected: axes.len(),
                actual: self.rank(),
            });
        }
        for (&actual, &(axis, expected)) in self.shape.iter().zip(axes) {
            if let Some(expected) = expected {
                if expected != actual {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        axis,
                        expected,
                        actual,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// In-place `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f32) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}
