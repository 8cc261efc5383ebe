//! The fixed two-convolution classifier.
//!
//! ```text
//! input S×S×C → conv 3×3 (f1) → leaky ReLU → maxpool 2×2
//!             → conv 3×3 (f2) → leaky ReLU → flatten → [dropout] → dense K → softmax
//! ```

mod heatmap;
mod metrics;
mod train;

pub use heatmap::{conv2_heatmap, quantize_heatmap};
pub use metrics::{confusion_matrix, status_label, ConfusionMatrix, TrainingStatus};
pub use train::{
    apply_dropout, Augmentation, EpochMode, StepReport, TrainOptions, TrainState,
    LOSS_HISTORY_LEN, STATUS_WINDOW,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ops;
use crate::tensor::{Tensor, TensorError};

pub const LEAKY_ALPHA: f32 = 0.1;
pub const CONV1_FILTERS: usize = 4;
pub const CONV2_FILTERS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training is paused")]
    Paused,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub input_size: usize,
    pub channels: usize,
    pub f1: usize,
    pub f2: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    /// The deployed architecture: 4 and 8 filters.
    pub fn new(input_size: usize, grayscale: bool, num_classes: usize) -> Self {
        Self {
            input_size,
            channels: if grayscale { 1 } else { 3 },
            f1: CONV1_FILTERS,
            f2: CONV2_FILTERS,
            num_classes,
        }
    }

    pub fn reference() -> Self {
        Self::new(64, false, 3)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size < 8 {
            return Err(ModelError::InvalidSpec(format!(
                "inputSize {} is below the minimum of 8",
                self.input_size
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(ModelError::InvalidSpec(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.f1 == 0 || self.f2 == 0 {
            return Err(ModelError::InvalidSpec("filter counts must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn grayscale(&self) -> bool {
        self.channels == 1
    }

    pub fn conv1_side(&self) -> usize {
        self.input_size - 2
    }

    pub fn pool_side(&self) -> usize {
        self.conv1_side() / 2
    }

    pub fn conv2_side(&self) -> usize {
        self.pool_side() - 2
    }

    pub fn flatten_len(&self) -> usize {
        self.conv2_side() * self.conv2_side() * self.f2
    }

    /// Parameter counts of conv1, conv2 and dense (weights + biases).
    pub fn layer_param_counts(&self) -> [usize; 3] {
        [
            9 * self.channels * self.f1 + self.f1,
            9 * self.f1 * self.f2 + self.f2,
            self.flatten_len() * self.num_classes + self.num_classes,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }
}

/// All trainable arrays in training layout: conv kernels `[ky, kx, ic, f]`,
/// dense `[flat, class]` with `flat = (y·W + x)·F + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub spec: ModelSpec,
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

impl ModelWeights {
    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            spec,
            conv1_w: Tensor::zeros(&[3, 3, spec.channels, spec.f1]),
            conv1_b: Tensor::zeros(&[spec.f1]),
            conv2_w: Tensor::zeros(&[3, 3, spec.f1, spec.f2]),
            conv2_b: Tensor::zeros(&[spec.f2]),
            dense_w: Tensor::zeros(&[spec.flatten_len(), spec.num_classes]),
            dense_b: Tensor::zeros(&[spec.num_classes]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks every array against the shapes implied by `spec`.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let expected = Self::zeros(self.spec);
        for (have, want) in self.tensors().iter().zip(expected.tensors()) {
            if have.shape() != want.shape() {
                return Err(ModelError::InvalidSpec(format!(
                    "weight shape {:?} does not match expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic initialization: weights uniform in ±√(6/fan_in), biases zero.
pub fn build_model(spec: ModelSpec, seed: u64) -> Result<ModelWeights, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = ModelWeights::zeros(spec);
    let fan_ins = [9 * spec.channels, 9 * spec.f1, spec.flatten_len()];
    for (tensor, fan_in) in [
        &mut weights.conv1_w,
        &mut weights.conv2_w,
        &mut weights.dense_w,
    ]
    .into_iter()
    .zip(fan_ins)
    {
        let limit = (6.0 / fan_in as f32).sqrt();
        for v in tensor.data_mut() {
            *v = rng.gen_range(-limit..=limit);
        }
    }
    Ok(weights)
}

/// Intermediate values of one forward pass, kept for backprop and heatmaps.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Tensor,
    pub conv1_pre: Tensor,
    pub conv1_act: Tensor,
    pub pool: Tensor,
    pub pool_argmax: Vec<usize>,
    pub conv2_pre: Tensor,
    /// Conv2 output after leaky ReLU, `side×side×f2`.
    pub conv2_act: Tensor,
    /// Flattened conv2 activation after dropout (identity at inference).
    pub dense_in: Tensor,
    pub dropout_scale: Option<Vec<f32>>,
    pub logits: Tensor,
    pub probs: Tensor,
}

fn check_image(spec: &ModelSpec, image: &Tensor) -> Result<(), ModelError> {
    image.expect_shape(
        "forward",
        &[
            ("height", Some(spec.input_size)),
            ("width", Some(spec.input_size)),
            ("channels", Some(spec.channels)),
        ],
    )?;
    Ok(())
}

pub(crate) fn forward_impl(
    weights: &ModelWeights,
    image: &Tensor,
    dropout: Option<(f32, &mut ChaCha8Rng)>,
) -> Result<ForwardCache, ModelError> {
    let spec = &weights.spec;
    check_image(spec, image)?;
    let conv1_pre = ops::conv2d_forward(image, &weights.conv1_w, &weights.conv1_b)?;
    let conv1_act = ops::leaky_relu(&conv1_pre, LEAKY_ALPHA);
    let (pool, pool_argmax) = ops::maxpool2x2(&conv1_act)?;
    let conv2_pre = ops::conv2d_forward(&pool, &weights.conv2_w, &weights.conv2_b)?;
    let conv2_act = ops::leaky_relu(&conv2_pre, LEAKY_ALPHA);
    debug_assert_eq!(conv1_act.shape(), &[spec.conv1_side(), spec.conv1_side(), spec.f1]);
    debug_assert_eq!(pool.shape(), &[spec.pool_side(), spec.pool_side(), spec.f1]);
    debug_assert_eq!(conv2_act.shape(), &[spec.conv2_side(), spec.conv2_side(), spec.f2]);
    let flat = conv2_act.clone().reshape(&[spec.flatten_len()])?;
    let (dense_in, dropout_scale) = match dropout {
        Some((rate, rng)) if rate > 0.0 => {
            let (out, scale) = apply_dropout(&flat, rate, rng, true);
            (out, scale)
        }
        _ => (flat, None),
    };
    let logits = ops::dense_forward(&dense_in, &weights.dense_w, &weights.dense_b)?;
    let probs = ops::softmax(&logits);
    Ok(ForwardCache {
        input: image.clone(),
        conv1_pre,
        conv1_act,
        pool,
        pool_argmax,
        conv2_pre,
        conv2_act,
        dense_in,
        dropout_scale,
        logits,
        probs,
    })
}

/// Inference-mode forward pass. `cache.probs` is the class distribution.
pub fn forward(weights: &ModelWeights, image: &Tensor) -> Result<ForwardCache, ModelError> {
    forward_impl(weights, image, None)
}

/// Gradients of the loss with respect to every weight array, same layout as
/// [`ModelWeights`].
pub type Gradients = ModelWeights;

/// Backpropagates softmax cross-entropy for `label` through a cached pass.
pub fn backward(
    weights: &ModelWeights,
    cache: &ForwardCache,
    label: usize,
) -> Result<(f32, Gradients), ModelError> {
    let (loss, grad_logits, _) = ops::softmax_cross_entropy(&cache.logits, label)?;
    let (grad_flat, dense_w, dense_b) =
        ops::dense_backward(&cache.dense_in, &weights.dense_w, &grad_logits)?;
    let mut grad_flat = grad_flat.into_data();
    if let Some(scale) = &cache.dropout_scale {
        for (g, s) in grad_flat.iter_mut().zip(scale) {
            *g *= s;
        }
    }
    let grad_conv2_act = Tensor::new(cache.conv2_act.shape(), grad_flat)?;
    let grad_conv2_pre = ops::leaky_relu_backward(&cache.conv2_pre, &grad_conv2_act, LEAKY_ALPHA);
    let conv2 = ops::conv2d_backward_opt(&cache.pool, &weights.conv2_w, &grad_conv2_pre, true)?;
    let grad_pool = conv2.input.expect("requested");
    let grad_conv1_act =
        ops::maxpool2x2_backward(&grad_pool, &cache.pool_argmax, cache.conv1_act.shape());
    let grad_conv1_pre = ops::leaky_relu_backward(&cache.conv1_pre, &grad_conv1_act, LEAKY_ALPHA);
    let conv1 = ops::conv2d_backward_opt(&cache.input, &weights.conv1_w, &grad_conv1_pre, false)?;
    Ok((
        loss,
        ModelWeights {
            spec: weights.spec,
            conv1_w: conv1.kernels,
            conv1_b: conv1.bias,
            conv2_w: conv2.kernels,
            conv2_b: conv2.bias,
            dense_w,
            dense_b,
        },
    ))
}

/// Index of the largest probability (lowest index on ties) and its value.
pub fn argmax(probs: &[f32]) -> (usize, f32) {
    let mut best = (0, probs[0]);
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > best.1 {
            best = (i, p);
        }
    }
    best
}

/// Predicted class and confidence.
pub fn infer(weights: &ModelWeights, image: &Tensor) -> Result<(usize, f32), ModelError> {
    let cache = forward(weights, image)?;
    Ok(argmax(cache.probs.data()))
}
