//! Trained-model persistence and inference.
//!
//! A checkpoint bundles everything needed to reproduce predictions on raw
//! data: architecture, weights, the normalization fitted on the training
//! scans, and provenance (seed, final loss). Checkpoints are JSON with
//! floats printed at 17 significant digits, so save/load round-trips are
//! bit-exact.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{LayerSpec, Model};
use crate::dataset::{ChannelMode, Method, WindowSpec};
use crate::error::{Error, Result};
use crate::ioutil;
use crate::timeseries::ChannelStats;

/// Bumped when the checkpoint layout changes incompatibly.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Location/scale of the training targets, for mapping predictions back
/// to raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    /// Mean of the training target values.
    pub mean: f64,
    /// Sample standard deviation of the training target values.
    pub std: f64,
}

impl TargetStats {
    /// Fits stats on raw target values (at least 2, non-constant).
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "target statistics need at least 2 values, got {}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "target values".into(),
            });
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Err(Error::ZeroVariance("target values are constant".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
        Ok(Self {
            mean,
            std: (ss / (n - 1.0)).sqrt(),
        })
    }

    /// Raw value to normalized units.
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    /// Normalized value back to raw units.
    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.std.is_finite() && self.std > 0.0) {
            return Err(Error::invalid(
                "target stats",
                format!("need finite mean and positive std, got {self:?}"),
            ));
        }
        Ok(())
    }
}

/// The full normalization a model was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Per-channel stats applied to input windows.
    pub input: ChannelStats,
    /// Target stats, when targets were normalized during training.
    pub target: Option<TargetStats>,
}

impl NormStats {
    /// Stats that leave data unchanged (mean 0, scale 1, no target map).
    pub fn identity(n_channels: usize) -> Self {
        Self {
            input: ChannelStats {
                mean: vec![0.0; n_channels],
                std: vec![1.0; n_channels],
                constant: vec![false; n_channels],
            },
            target: None,
        }
    }

    /// Validates internal coherence (typically after deserialization).
    pub fn validate(&self) -> Result<()> {
        self.input.clone().validated()?;
        if let Some(t) = &self.target {
            t.validate()?;
        }
        Ok(())
    }
}

/// A trained model with everything needed to apply it to raw windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    /// Layout version of this file.
    pub schema_version: u32,
    /// Input window length in volumes.
    pub window_len: usize,
    /// Which channels the model consumes.
    pub channel_mode: ChannelMode,
    /// Which part of the scan the model reconstructs.
    pub method: Method,
    /// Layer chain.
    pub arch: Vec<LayerSpec>,
    /// Parameters in layer order, alternating weight matrix (row-major)
    /// and bias per parameterized layer.
    pub weights: Vec<Vec<f64>>,
    /// Normalization fitted on the training scans.
    pub norm_stats: NormStats,
    /// Seed that produced the initial weights and batch order.
    pub seed: u64,
    /// Mean training loss of the last epoch (`None` for untrained models).
    pub final_train_loss: Option<f64>,
}

impl ModelCheckpoint {
    /// Captures a model's weights together with its training context.
    pub fn from_model(
        model: &Model,
        channel_mode: ChannelMode,
        method: Method,
        norm_stats: NormStats,
        seed: u64,
        final_train_loss: Option<f64>,
    ) -> Self {
        let flat = model.params_flat();
        let mut weights = Vec::new();
        let mut pos = 0;
        for seg in model.param_segments() {
            weights.push(flat[pos..pos + seg].to_vec());
            pos += seg;
        }
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            window_len: model.window_len(),
            channel_mode,
            method,
            arch: model.arch().to_vec(),
            weights,
            norm_stats,
            seed,
            final_train_loss,
        }
    }

    /// Checks the checkpoint is internally coherent and loadable.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let spec = WindowSpec::new(self.window_len, self.channel_mode.n_channels())?;
        let model = Model::zeroed(self.window_len, spec.n_channels(), &self.arch)?;
        if model.out_dim() != self.method.out_dim(&spec) {
            return Err(Error::Checkpoint(format!(
                "model outputs {} values but the {} method needs {}",
                model.out_dim(),
                self.method.as_str(),
                self.method.out_dim(&spec)
            )));
        }
        let segments = model.param_segments();
        if self.weights.len() != segments.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} weight segments, found {}",
                segments.len(),
                self.weights.len()
            )));
        }
        for (i, (seg, expected)) in self.weights.iter().zip(&segments).enumerate() {
            if seg.len() != *expected {
                return Err(Error::Checkpoint(format!(
                    "weight segment {i} has {} entries, expected {expected}",
                    seg.len()
                )));
            }
            if !seg.iter().all(|v| v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "weight segment {i} contains non-finite values"
                )));
            }
        }
        self.norm_stats.validate()?;
        if self.norm_stats.input.n_channels() != spec.n_channels() {
            return Err(Error::Checkpoint(format!(
                "normalization covers {} channels but the model takes {}",
                self.norm_stats.input.n_channels(),
                spec.n_channels()
            )));
        }
        if let Some(loss) = self.final_train_loss {
            if !loss.is_finite() {
                return Err(Error::Checkpoint("final_train_loss is not finite".into()));
            }
        }
        Ok(())
    }

    /// Reconstructs the runnable model.
    pub fn to_model(&self) -> Result<Model> {
        self.validate()?;
        let mut model = Model::zeroed(self.window_len, self.channel_mode.n_channels(), &self.arch)?;
        let flat: Vec<f64> = self.weights.iter().flatten().copied().collect();
        model.set_params_flat(&flat)?;
        Ok(model)
    }

    /// Writes the checkpoint as JSON (floats at 17 significant digits).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut bytes = ioutil::to_json_vec("model checkpoint", self)?;
        bytes.push(b'\n');
        ioutil::write_bytes(path, &bytes)
    }

    /// Reads and validates a checkpoint written by [`ModelCheckpoint::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = ioutil::read_text_file(path)?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Runs the model on raw (un-normalized) windows.
    ///
    /// Inputs are `[B x window_len x channels]` in raw units; the stored
    /// channel stats are applied before the forward pass. Outputs stay in
    /// the model's native (normalized) units; see
    /// [`ModelCheckpoint::denormalize_targets`].
    pub fn predict(&self, windows: &Array3<f64>) -> Result<Array2<f64>> {
        if !windows.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "prediction input windows".into(),
            });
        }
        let model = self.to_model()?;
        let stats = &self.norm_stats.input;
        if windows.dim().2 != stats.n_channels() {
            return Err(Error::Shape(format!(
                "windows have {} channels, normalization covers {}",
                windows.dim().2,
                stats.n_channels()
            )));
        }
        let mut z = windows.clone();
        for ((_, _, c), v) in z.indexed_iter_mut() {
            *v = if stats.constant[c] {
                0.0
            } else {
                (*v - stats.mean[c]) / stats.std[c]
            };
        }
        let preds = model.forward(&z)?;
        if !preds.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "model predictions".into(),
            });
        }
        Ok(preds)
    }

    /// Maps normalized predictions back to raw target units. Identity when
    /// the model was trained on raw targets.
    pub fn denormalize_targets(&self, preds: &Array2<f64>) -> Array2<f64> {
        match &self.norm_stats.target {
            None => preds.clone(),
            Some(t) => preds.mapv(|v| t.denormalize(v)),
        }
    }
}
