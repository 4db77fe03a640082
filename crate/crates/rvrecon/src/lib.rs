//! Reconstruction of respiratory variation (RV) from fMRI data.
//!
//! Scanner-synchronized breathing measurements are often missing or
//! unusable; this crate rebuilds the RV timecourse from signals that are
//! always present in an fMRI session: the BOLD timeseries of cortical
//! regions and the rigid-body head-motion parameters, which carry both
//! true respiratory motion and pseudomotion along the phase-encoding axis.
//!
//! * [`timeseries`] - scan/trace types, RV extraction, channel z-scoring
//! * [`spectral`] - Welch power spectra, band peaks, grayplot rendering
//! * [`dataset`] - sliding-window example construction and stitching
//! * [`neuralnet`] - small 1-D convolutional regressors, trained from scratch
//! * [`metrics`] - MAE/MSE/Pearson/DTW and the Friedman rank test
//! * [`synth`] - synthetic scans with controllable respiratory coupling
//! * [`pipeline`] - cross-validated experiments over scan collections
//!
//! Everything is deterministic: all randomness flows from explicit seeds,
//! and serialized artifacts round-trip bit-exactly.

#![warn(missing_docs)]

pub mod dataset;
pub mod error;
mod ioutil;
pub mod metrics;
pub mod neuralnet;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod timeseries;

pub use error::{Error, Result};
pub use ioutil::fmt_real;
