//! Mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::checkpoint::{ModelCheckpoint, NormStats};
use super::{LayerSpec, Model};
use crate::dataset::{ChannelMode, WindowedDataset};
use crate::error::{Error, Result};

/// Optimizer and batching settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Adam step size.
    pub learning_rate: f64,
    /// Decay of the first moment estimate.
    pub beta1: f64,
    /// Decay of the second moment estimate.
    pub beta2: f64,
    /// Stabilizer added to the square root of the second moment.
    pub epsilon: f64,
    /// Examples per gradient step; the trailing batch may be smaller.
    pub batch_size: usize,
    /// Full passes over the training windows.
    pub epochs: usize,
    /// Seeds weight initialization and epoch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Rejects settings the optimizer cannot run with.
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::invalid("train config", why));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
                return bad(format!("{name} must be in [0, 1), got {beta}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// Trains a fresh model on an already-normalized dataset.
///
/// `dataset` inputs and targets must already be in the normalized space
/// described by `norm`; training never applies `norm` itself. The stats
/// are stored in the returned checkpoint so that predictions can map raw
/// windows into the same space and raw outputs back out of it.
///
/// Weight initialization consumes the seeded generator first, then each
/// epoch shuffles window indices, so two runs with the same seed and the
/// same dataset are bit-identical. With `epochs = 0` the checkpoint holds
/// the untouched initial weights.
pub fn fit(
    dataset: &WindowedDataset,
    arch: &[LayerSpec],
    config: &TrainConfig,
    norm: &NormStats,
) -> Result<ModelCheckpoint> {
    config.validate()?;
    norm.validate()?;
    if dataset.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    let spec = dataset.spec();
    if norm.input.n_channels() != spec.n_channels() {
        return Err(Error::Shape(format!(
            "normalization covers {} channels, windows have {}",
            norm.input.n_channels(),
            spec.n_channels()
        )));
    }
    let channel_mode = ChannelMode::from_n_channels(spec.n_channels())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(spec.window_len(), spec.n_channels(), arch, &mut rng)?;
    if model.out_dim() != dataset.target_dim() {
        return Err(Error::Shape(format!(
            "model outputs {} values per window, targets have {}",
            model.out_dim(),
            dataset.target_dim()
        )));
    }

    let mut params = model.params_flat();
    let mut state = AdamState::new(params.len());
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut final_train_loss = None;
    for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in indices.chunks(config.batch_size).enumerate() {
            let (inputs, targets) = dataset.gather(batch);
            let (loss, grads) = model.loss_and_grad(&inputs, &targets).map_err(|e| match e {
                Error::NonFinite { context } => Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    msg: context,
                },
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut state, config)?;
            model.set_params_flat(&params)?;
        }
        // Mean over windows of the per-batch losses, computed with the
        // weights as they were when each batch was visited.
        final_train_loss = Some(loss_sum / dataset.len() as f64);
    }
    Ok(ModelCheckpoint::from_model(
        &model,
        channel_mode,
        dataset.method(),
        norm.clone(),
        config.seed,
        final_train_loss,
    ))
}
