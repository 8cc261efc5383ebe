use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{status_label, TrainingStatus};
use super::{backward, forward_impl, Gradients, ModelError, ModelWeights};
use crate::adam::{adam_step, AdamState};
use crate::dataset::LabeledImage;
use crate::tensor::{Tensor, TensorError};

/// Number of per-batch losses retained in [`TrainState::loss_history`].
pub const LOSS_HISTORY_LEN: usize = 1000;
/// Window used for the status label and progress reports.
pub const STATUS_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochMode {
    /// Shuffled permutation per epoch, walked in batch-size strides.
    UseAllData,
    /// Uniform sampling with replacement.
    RandomBatch,
}

/// Photometric jitter: contrast about the per-image mean, then a brightness
/// offset, then clamping to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub enabled: bool,
    pub brightness: f32,
    pub contrast_min: f32,
    pub contrast_max: f32,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            enabled: true,
            brightness: 0.15,
            contrast_min: 0.85,
            contrast_max: 1.15,
        }
    }
}

impl Augmentation {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn apply(&self, image: &Tensor, rng: &mut impl Rng) -> Tensor {
        if !self.enabled {
            return image.clone();
        }
        let factor = rng.gen_range(self.contrast_min..=self.contrast_max);
        let delta = rng.gen_range(-self.brightness..=self.brightness);
        let mean = image.sum() / image.len() as f32;
        let data = image
            .data()
            .iter()
            .map(|&v| ((v - mean) * factor + mean + delta).clamp(0.0, 1.0))
            .collect();
        Tensor::new(image.shape(), data).expect("clamped values are finite")
    }
}

/// Inverted dropout. In training mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; the returned per-unit
/// scale is what backprop multiplies by. Inference mode is the identity.
pub fn apply_dropout(
    activation: &Tensor,
    rate: f32,
    rng: &mut impl Rng,
    training: bool,
) -> (Tensor, Option<Vec<f32>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if !training || rate == 0.0 {
        return (activation.clone(), None);
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f32> = (0..activation.len())
        .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
        .collect();
    let data = activation.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
    (Tensor::new(activation.shape(), data).expect("same shape"), Some(scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub dropout: f32,
    pub augmentation: Augmentation,
    pub epoch_mode: EpochMode,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 6,
            learning_rate: 0.0003,
            dropout: 0.3,
            augmentation: Augmentation::default(),
            epoch_mode: EpochMode::UseAllData,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub batch: u64,
    pub epoch: u64,
    pub loss: f32,
    /// Mean of the last [`STATUS_WINDOW`] batch losses.
    pub recent_loss: f32,
    pub status: TrainingStatus,
    /// Mean batch loss of the epoch that this step completed, if any.
    pub epoch_completed: Option<f32>,
}

/// Stepwise training engine: one call to [`TrainState::step`] trains one batch,
/// so a host loop can interleave inference and control between steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub weights: ModelWeights,
    pub adam: [AdamState; 6],
    pub batch_counter: u64,
    pub epoch_counter: u64,
    pub loss_history: VecDeque<f32>,
    /// Mean batch loss for each completed epoch.
    pub epoch_losses: Vec<f32>,
    pub paused: bool,
    pub options: TrainOptions,
    rng: ChaCha8Rng,
    permutation: Vec<usize>,
    cursor: usize,
    samples_seen: u64,
    epoch_loss_sum: f64,
    epoch_batches: u32,
}

impl TrainState {
    pub fn new(weights: ModelWeights, options: TrainOptions) -> Self {
        let adam = weights
            .tensors()
            .map(|t| AdamState::new(t.shape(), options.learning_rate));
        Self {
            weights,
            adam,
            batch_counter: 0,
            epoch_counter: 0,
            loss_history: VecDeque::with_capacity(LOSS_HISTORY_LEN),
            epoch_losses: Vec::new(),
            paused: false,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            options,
            permutation: Vec::new(),
            cursor: 0,
            samples_seen: 0,
            epoch_loss_sum: 0.0,
            epoch_batches: 0,
        }
    }

    pub fn epoch_mode(&self) -> EpochMode {
        self.options.epoch_mode
    }

    pub fn set_epoch_mode(&mut self, mode: EpochMode) {
        self.options.epoch_mode = mode;
    }

    pub fn set_learning_rate(&mut self, lr: f32) {
        self.options.learning_rate = lr;
        for a in &mut self.adam {
            a.lr = lr;
        }
    }

    pub fn pause(&mut self) {
        self.paused = true;
    }

    pub fn resume(&mut self) {
        self.paused = false;
    }

    /// Mean of the last [`STATUS_WINDOW`] batch losses.
    pub fn recent_loss(&self) -> Option<f32> {
        let n = self.loss_history.len().min(STATUS_WINDOW);
        if n == 0 {
            return None;
        }
        Some(self.loss_history.iter().rev().take(n).sum::<f32>() / n as f32)
    }

    pub fn status(&self) -> Option<TrainingStatus> {
        self.recent_loss().map(status_label)
    }

    /// Picks the dataset indices of the next batch and advances the epoch
    /// counter.
    pub fn next_batch(&mut self, dataset_len: usize) -> Result<Vec<usize>, ModelError> {
        if dataset_len == 0 {
            return Err(ModelError::EmptyDataset);
        }
        let batch = self.options.batch_size.max(1);
        match self.options.epoch_mode {
            EpochMode::UseAllData => {
                if self.permutation.len() != dataset_len || self.cursor >= dataset_len {
                    self.permutation = (0..dataset_len).collect();
                    self.permutation.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let end = (self.cursor + batch).min(dataset_len);
                let picked = self.permutation[self.cursor..end].to_vec();
                self.cursor = end;
                if self.cursor == dataset_len {
                    self.epoch_counter += 1;
                }
                Ok(picked)
            }
            EpochMode::RandomBatch => {
                let picked: Vec<usize> =
                    (0..batch).map(|_| self.rng.gen_range(0..dataset_len)).collect();
                let before = self.samples_seen / dataset_len as u64;
                self.samples_seen += batch as u64;
                self.epoch_counter += self.samples_seen / dataset_len as u64 - before;
                Ok(picked)
            }
        }
    }

    /// One optimizer step on gradients averaged over `batch`.
    pub fn train_batch(&mut self, batch: &[(&Tensor, usize)]) -> Result<f32, ModelError> {
        if self.paused {
            return Err(ModelError::Paused);
        }
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let classes = self.weights.spec.num_classes;
        if let Some(&(_, label)) = batch.iter().find(|(_, l)| *l >= classes) {
            return Err(TensorError::LabelOutOfRange { label, classes }.into());
        }
        // per-sample streams drawn up front keep results independent of
        // thread scheduling
        let seeds: Vec<u64> = batch.iter().map(|_| self.rng.gen()).collect();
        let weights = &self.weights;
        let opts = &self.options;
        let results: Vec<Result<(f32, Gradients), ModelError>> = batch
            .par_iter()
            .zip(seeds)
            .map(|(&(image, label), seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let augmented = opts.augmentation.apply(image, &mut rng);
                let cache = forward_impl(weights, &augmented, Some((opts.dropout, &mut rng)))?;
                backward(weights, &cache, label)
            })
            .collect();

        let scale = 1.0 / batch.len() as f32;
        let mut total = ModelWeights::zeros(self.weights.spec);
        let mut loss_sum = 0.0f32;
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            for (acc, g) in total.tensors_mut().into_iter().zip(grads.tensors()) {
                acc.add_scaled(g, scale);
            }
        }
        for ((param, grad), state) in self
            .weights
            .tensors_mut()
            .into_iter()
            .zip(total.tensors())
            .zip(self.adam.iter_mut())
        {
            adam_step(param, grad, state)?;
        }
        let loss = loss_sum * scale;
        if self.loss_history.len() == LOSS_HISTORY_LEN {
            self.loss_history.pop_front();
        }
        self.loss_history.push_back(loss);
        self.batch_counter += 1;
        Ok(loss)
    }

    /// Trains one batch drawn from `dataset`. Returns `None` while paused.
    pub fn step(&mut self, dataset: &[LabeledImage]) -> Result<Option<StepReport>, ModelError> {
        if self.paused {
            return Ok(None);
        }
        let epoch_before = self.epoch_counter;
        let indices = self.next_batch(dataset.len())?;
        let batch: Vec<(&Tensor, usize)> = indices
            .iter()
            .map(|&i| (&dataset[i].pixels, dataset[i].class_index))
            .collect();
        let loss = self.train_batch(&batch)?;
        self.epoch_loss_sum += loss as f64;
        self.epoch_batches += 1;
        let mut epoch_completed = None;
        if self.epoch_counter > epoch_before {
            let mean = (self.epoch_loss_sum / self.epoch_batches as f64) as f32;
            self.epoch_losses.push(mean);
            self.epoch_loss_sum = 0.0;
            self.epoch_batches = 0;
            epoch_completed = Some(mean);
        }
        let recent = self.recent_loss().expect("just pushed");
        Ok(Some(StepReport {
            batch: self.batch_counter,
            epoch: self.epoch_counter,
            loss,
            recent_loss: recent,
            status: status_label(recent),
            epoch_completed,
        }))
    }

    /// Runs steps until `epochs` epochs have completed.
    pub fn train_epochs(
        &mut self,
        dataset: &[LabeledImage],
        epochs: u64,
        mut on_step: impl FnMut(&StepReport),
    ) -> Result<(), ModelError> {
        let target = self.epoch_counter + epochs;
        while self.epoch_counter < target {
            match self.step(dataset)? {
                Some(report) => on_step(&report),
                None => return Err(ModelError::Paused),
            }
        }
        Ok(())
    }

    /// First completed epoch (1-based) whose loss and the next two stay
    /// below 0.2. Informational only.
    pub fn convergence_epoch(&self) -> Option<usize> {
        self.epoch_losses
            .windows(3)
            .position(|w| w.iter().all(|&l| l < 0.2))
            .map(|i| i + 1)
    }
}
