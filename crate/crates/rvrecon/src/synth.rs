//! Seeded generator of physiologically coupled synthetic scans.
//!
//! The generator produces a respiratory belt waveform (slowly wandering
//! rate, occasional deep breaths, rare breath holds), then derives a scan
//! from it: BOLD channels carry the windowed respiratory variation
//! convolved with a respiration response function, and the motion channel
//! along the phase-encode axis carries breathing pseudomotion plus a
//! deep-breath excursion term. Synthetic scans are ground truth for the
//! whole reconstruction pipeline: every coupling is known by construction.
//!
//! Randomness layout: one seed, six independent generator streams, so
//! changing one component's parameters never shifts another's draws.
//!
//! | stream | consumer                                      |
//! |--------|-----------------------------------------------|
//! | 0      | initial phase, breathing-rate walk            |
//! | 1      | deep-breath episode placement                 |
//! | 2      | breath-hold placement                         |
//! | 3      | BOLD observation noise                        |
//! | 4      | motion walk and observation noise             |
//! | 5      | per-region drift coefficients                 |
//!
//! Within each stream the draw order is fixed by the scan geometry alone.
//! Any new draw added to a stream changes outputs for existing seeds and
//! must be treated as a breaking change.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{
    extract_rv, RespiratoryTrace, RvSeries, ScanRecord, N_MOTION, N_ROIS, RV_HALF_WINDOW_S,
};

/// Motion column carrying the phase-encode pseudomotion (anterior to
/// posterior translation).
pub const PE_AXIS: usize = 1;

/// The breathing rate walk is clamped to `base_rate_hz` times 1 plus or
/// minus this fraction, so the carrier stays identifiable as the
/// breathing frequency.
const RATE_CLAMP_FRAC: f64 = 0.15;

/// Breath holds attenuate the envelope by at most this factor (the
/// residual 0.05 keeps windowed variance strictly positive).
const HOLD_DEPTH: f64 = 0.95;

fn default_coupling_bold() -> Vec<f64> {
    // Heterogeneous per-region gains, 0.5 to 1.5.
    (0..N_ROIS).map(|i| 0.5 + i as f64 / (N_ROIS - 1) as f64).collect()
}

/// All knobs of the synthetic scan generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Volumes per scan.
    pub n_volumes: usize,
    /// Volume sampling interval in seconds.
    pub tr_s: f64,
    /// Belt sampling rate in Hz.
    pub resp_fs_hz: f64,
    /// Central breathing rate in Hz.
    pub base_rate_hz: f64,
    /// Per-sample standard deviation of the breathing-rate random walk
    /// (Hz per belt sample).
    pub rate_walk_sd: f64,
    /// Mean deep-breath episodes per minute (0 disables them).
    pub deep_breath_rate_per_min: f64,
    /// Amplitude multiplier at the peak of a deep breath (>= 1).
    pub deep_breath_gain: f64,
    /// Probability of a breath hold within any given minute.
    pub breath_hold_prob: f64,
    /// BOLD observation noise standard deviation; also scales drift.
    pub bold_noise_sd: f64,
    /// Motion observation noise standard deviation (mm).
    pub motion_noise_sd: f64,
    /// Per-region gain on the convolved respiratory BOLD component.
    pub coupling_bold: Vec<f64>,
    /// Gain on the phase-encode pseudomotion component (mm per belt unit).
    pub coupling_motion_pe: f64,
    /// Seeds all six generator streams.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_volumes: 600,
            tr_s: 0.72,
            resp_fs_hz: 10.0,
            base_rate_hz: 0.3,
            rate_walk_sd: 1e-3,
            // Mean episode interval ~8.3 s puts envelope power near 0.12 Hz.
            deep_breath_rate_per_min: 7.2,
            deep_breath_gain: 2.5,
            breath_hold_prob: 0.3,
            bold_noise_sd: 0.3,
            motion_noise_sd: 0.01,
            coupling_bold: default_coupling_bold(),
            coupling_motion_pe: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Rejects configurations the generator cannot honor.
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::invalid("synth config", why));
        if self.n_volumes == 0 {
            return bad("n_volumes must be >= 1".into());
        }
        if !(self.tr_s.is_finite() && self.tr_s > 0.0) {
            return bad(format!("tr_s must be positive, got {}", self.tr_s));
        }
        if !(self.resp_fs_hz.is_finite() && self.resp_fs_hz > 0.0) {
            return bad(format!("resp_fs_hz must be positive, got {}", self.resp_fs_hz));
        }
        if !(self.base_rate_hz.is_finite() && self.base_rate_hz > 0.0) {
            return bad(format!("base_rate_hz must be positive, got {}", self.base_rate_hz));
        }
        if self.base_rate_hz >= self.resp_fs_hz / 2.0 {
            return bad(format!(
                "base_rate_hz ({}) must be below the belt Nyquist rate ({})",
                self.base_rate_hz,
                self.resp_fs_hz / 2.0
            ));
        }
        for (name, v) in [
            ("rate_walk_sd", self.rate_walk_sd),
            ("deep_breath_rate_per_min", self.deep_breath_rate_per_min),
            ("bold_noise_sd", self.bold_noise_sd),
            ("motion_noise_sd", self.motion_noise_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.deep_breath_gain.is_finite() && self.deep_breath_gain >= 1.0) {
            return bad(format!(
                "deep_breath_gain must be >= 1, got {}",
                self.deep_breath_gain
            ));
        }
        if !(self.breath_hold_prob.is_finite() && (0.0..=1.0).contains(&self.breath_hold_prob)) {
            return bad(format!(
                "breath_hold_prob must be in [0, 1], got {}",
                self.breath_hold_prob
            ));
        }
        if self.coupling_bold.len() != N_ROIS {
            return bad(format!(
                "coupling_bold must have {N_ROIS} entries, got {}",
                self.coupling_bold.len()
            ));
        }
        if !self.coupling_bold.iter().all(|v| v.is_finite())
            || !self.coupling_motion_pe.is_finite()
        {
            return Err(Error::NonFinite {
                context: "synth coupling gains".into(),
            });
        }
        Ok(())
    }

    /// Belt samples needed so that every RV window of every volume is
    /// fully covered (no boundary clamping on synthetic data).
    fn n_resp_samples(&self) -> usize {
        let end_s = (self.n_volumes as f64 - 0.5) * self.tr_s + RV_HALF_WINDOW_S;
        (end_s * self.resp_fs_hz).ceil() as usize + 1
    }

    fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// One amplitude-envelope episode: a raised-cosine bump.
struct Bump {
    center_s: f64,
    duration_s: f64,
}

impl Bump {
    /// 1 at the center, 0 outside `center +- duration/2`.
    fn at(&self, t_s: f64) -> f64 {
        let off = (t_s - self.center_s).abs();
        if off >= self.duration_s / 2.0 {
            0.0
        } else {
            0.5 * (1.0 + (2.0 * std::f64::consts::PI * off / self.duration_s).cos())
        }
    }
}

fn max_bump(bumps: &[Bump], t_s: f64) -> f64 {
    bumps.iter().map(|b| b.at(t_s)).fold(0.0, f64::max)
}

/// Generates the respiratory belt waveform.
///
/// The waveform is `a(t) * sin(2*pi*phi(t))` where the instantaneous rate
/// `phi'(t)` performs a clamped random walk around `base_rate_hz` and the
/// envelope `a(t)` is 1, raised to `deep_breath_gain` during deep-breath
/// episodes and attenuated toward 0 during breath holds. Deterministic
/// per seed.
pub fn gen_resp(config: &SynthConfig) -> Result<RespiratoryTrace> {
    config.validate()?;
    let n = config.n_resp_samples();
    let fs = config.resp_fs_hz;
    let duration_s = (n - 1) as f64 / fs;

    // Stream 0: initial phase, then one rate step per remaining sample.
    let mut rng = config.stream(0);
    let phase0: f64 = rng.random();
    let lo = config.base_rate_hz * (1.0 - RATE_CLAMP_FRAC);
    let hi = config.base_rate_hz * (1.0 + RATE_CLAMP_FRAC);
    let mut rate = config.base_rate_hz;
    let mut phase = phase0;
    let mut phases = Vec::with_capacity(n);
    phases.push(phase);
    for _ in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        rate = (rate + config.rate_walk_sd * z).clamp(lo, hi);
        phase += rate / fs;
        phases.push(phase);
    }

    // Stream 1: deep-breath episodes, quasi-regular spacing (mean interval
    // jittered +-25%) so the envelope concentrates power near the episode
    // rate instead of spreading flat.
    let mut breaths = Vec::new();
    if config.deep_breath_rate_per_min > 0.0 {
        let mut rng = config.stream(1);
        let mean_interval_s = 60.0 / config.deep_breath_rate_per_min;
        let duration = 2.0 / config.base_rate_hz;
        let mut center = rng.random::<f64>() * mean_interval_s;
        while center < duration_s + duration {
            breaths.push(Bump {
                center_s: center,
                duration_s: duration,
            });
            center += mean_interval_s * (0.75 + 0.5 * rng.random::<f64>());
        }
    }

    // Stream 2: at most one breath hold per minute of recording.
    let mut holds = Vec::new();
    if config.breath_hold_prob > 0.0 {
        let mut rng = config.stream(2);
        let minutes = (duration_s / 60.0).ceil() as usize;
        let duration = 2.0 / config.base_rate_hz;
        for m in 0..minutes {
            let trigger: f64 = rng.random();
            let position: f64 = rng.random();
            if trigger < config.breath_hold_prob {
                holds.push(Bump {
                    center_s: (m as f64 + position) * 60.0,
                    duration_s: duration,
                });
            }
        }
    }

    let two_pi = 2.0 * std::f64::consts::PI;
    let gain = config.deep_breath_gain;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t_s = i as f64 / fs;
            let amp = (1.0 + (gain - 1.0) * max_bump(&breaths, t_s))
                * (1.0 - HOLD_DEPTH * max_bump(&holds, t_s));
            amp * (two_pi * phases[i]).sin()
        })
        .collect();
    RespiratoryTrace::new(samples, fs)
}

/// Respiration response function sampled on the volume grid, truncated at
/// 60 s. `RRF(t) = 0.6 t^2.1 e^(-t/1.6) - 0.0023 t^3.54 e^(-t/4.25)`:
/// an early positive lobe peaking near 3.4 s and a long negative
/// undershoot bottoming out near 15 s.
pub fn rrf_kernel(tr_s: f64) -> Vec<f64> {
    let taps = (60.0 / tr_s).floor() as usize + 1;
    (0..taps)
        .map(|k| {
            let t = k as f64 * tr_s;
            0.6 * t.powf(2.1) * (-t / 1.6).exp() - 0.0023 * t.powf(3.54) * (-t / 4.25).exp()
        })
        .collect()
}

/// Causal convolution on the volume grid with the input edge-padded at
/// the start (the belt is treated as already breathing steadily before
/// the first volume).
fn convolve_causal(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, &w)| w * x[t.saturating_sub(k)])
                .sum()
        })
        .collect()
}

/// Nearest belt sample at each volume's window center `(t + 0.5) * tr_s`.
fn resp_at_volumes(trace: &RespiratoryTrace, tr_s: f64, n_volumes: usize) -> Vec<f64> {
    let n = trace.len();
    (0..n_volumes)
        .map(|t| {
            let idx = ((t as f64 + 0.5) * tr_s * trace.fs_hz()).round() as usize;
            trace.samples()[idx.min(n - 1)]
        })
        .collect()
}

/// Generates a full scan with the belt trace attached.
///
/// BOLD region `i` is `coupling_bold[i]` times the RV-convolved response,
/// plus a quadratic drift (coefficients scaled by `bold_noise_sd`) and
/// white noise. The phase-encode motion column carries the breathing
/// waveform itself (pseudomotion) plus half-weight centered RV (deep
/// breath excursions), a slow random walk, and noise; the other five
/// motion columns get a 0.2-gain copy of the respiratory part plus their
/// own noise.
pub fn gen_scan(config: &SynthConfig, scan_id: impl Into<String>) -> Result<ScanRecord> {
    config.validate()?;
    let t_vols = config.n_volumes;
    let resp = gen_resp(config)?;
    let rv_true = extract_rv(&resp, config.tr_s, t_vols)?;

    // BOLD: convolved respiratory component, drift, noise.
    let kernel = rrf_kernel(config.tr_s);
    let response = convolve_causal(rv_true.values(), &kernel);
    let mut drift_rng = config.stream(5);
    let drift_coef: Vec<(f64, f64)> = (0..N_ROIS)
        .map(|_| {
            let c1: f64 = drift_rng.sample(StandardNormal);
            let c2: f64 = drift_rng.sample(StandardNormal);
            (config.bold_noise_sd * c1, config.bold_noise_sd * c2)
        })
        .collect();
    let mut bold_rng = config.stream(3);
    let mut bold = Array2::zeros((t_vols, N_ROIS));
    let t_denom = (t_vols - 1).max(1) as f64;
    for t in 0..t_vols {
        let ramp = t as f64 / t_denom;
        for i in 0..N_ROIS {
            let z: f64 = bold_rng.sample(StandardNormal);
            bold[(t, i)] = config.coupling_bold[i] * response[t]
                + drift_coef[i].0 * ramp
                + drift_coef[i].1 * ramp * ramp
                + config.bold_noise_sd * z;
        }
    }

    // Motion: phase-encode column with pseudomotion, walk, and noise.
    let resp_vol = resp_at_volumes(&resp, config.tr_s, t_vols);
    let rv_mean = rv_true.values().iter().sum::<f64>() / t_vols as f64;
    let pe_det: Vec<f64> = (0..t_vols)
        .map(|t| {
            config.coupling_motion_pe * resp_vol[t]
                + 0.5 * config.coupling_motion_pe * (rv_true.values()[t] - rv_mean)
        })
        .collect();
    let mut motion_rng = config.stream(4);
    let mut motion = Array2::zeros((t_vols, N_MOTION));
    let mut walk = 0.0;
    for t in 0..t_vols {
        let step: f64 = motion_rng.sample(StandardNormal);
        let noise: f64 = motion_rng.sample(StandardNormal);
        walk += 0.1 * config.motion_noise_sd * step;
        motion[(t, PE_AXIS)] = pe_det[t] + walk + config.motion_noise_sd * noise;
    }
    for col in 0..N_MOTION {
        if col == PE_AXIS {
            continue;
        }
        for t in 0..t_vols {
            let noise: f64 = motion_rng.sample(StandardNormal);
            motion[(t, col)] = 0.2 * pe_det[t] + config.motion_noise_sd * noise;
        }
    }

    ScanRecord::new(scan_id, bold, motion, config.tr_s, PE_AXIS, Some(resp))
}

/// Ground-truth RV of a synthetic scan (recomputed from its belt trace).
pub fn true_rv(scan: &ScanRecord) -> Result<RvSeries> {
    let resp = scan.resp().ok_or_else(|| {
        Error::invalid("true RV", "scan carries no respiratory trace")
    })?;
    extract_rv(resp, scan.tr_s(), scan.n_volumes())
}
