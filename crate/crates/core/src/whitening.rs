//! Initial noise statistics and AR pre-whitening.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dsp::{autocorrelation, fir_filter, levinson_durbin, ArModel, SignalBuffer};
use crate::error::{Error, Result};

/// Inverse AR filter `(1 + sum_i g_i z^-i) / sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    model: ArModel,
}

impl Whitener {
    pub fn new(model: ArModel) -> Result<Self> {
        if !model.is_stable() {
            return Err(Error::UnstableModel);
        }
        Ok(Self { model })
    }

    /// Order 0, unit variance.
    pub fn identity() -> Self {
        Self {
            model: ArModel::white(1.0),
        }
    }

    pub fn model(&self) -> &ArModel {
        &self.model
    }

    /// Filter a raw slice. A silent model passes the input through untouched.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.model.is_silent() {
            return x.to_vec();
        }
        let gain = 1.0 / self.model.excitation_variance.sqrt();
        fir_filter(x, &self.model.coeffs, gain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimateConfig {
    pub frame_ms: f64,
    /// Share of lowest-energy frames treated as noise only.
    pub fraction: f64,
    pub order: usize,
}

impl Default for NoiseEstimateConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            fraction: 0.1,
            order: 14,
        }
    }
}

/// AR noise model from the quietest frames of a recording.
///
/// Frames are ranked by energy and the lowest `fraction` of them are pooled;
/// their autocorrelations are summed (equivalent to fitting the concatenated
/// frames without the junction terms) before a Levinson-Durbin solve.
pub fn initial_noise_estimate(y: &SignalBuffer, cfg: &NoiseEstimateConfig) -> Result<ArModel> {
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "noise fraction must be in (0, 1], got {}",
            cfg.fraction
        )));
    }
    let frame = ((cfg.frame_ms * 1e-3 * y.sample_rate()).round() as usize).max(cfg.order + 1);
    let frames = y.len() / frame;
    if frames <= 10 {
        return Err(Error::TooShort {
            needed: 11 * frame,
            got: y.len(),
        });
    }
    let x = y.samples();
    let mut energies: Vec<(usize, f64)> = (0..frames)
        .map(|f| (f, x[f * frame..(f + 1) * frame].iter().map(|v| v * v).sum()))
        .collect();
    energies.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let keep = ((frames as f64 * cfg.fraction).ceil() as usize).clamp(1, frames);

    let mut r = vec![0.0; cfg.order + 1];
    for &(f, _) in &energies[..keep] {
        let rf = autocorrelation(&x[f * frame..(f + 1) * frame], cfg.order);
        for (acc, v) in r.iter_mut().zip(rf) {
            *acc += v / keep as f64;
        }
    }
    levinson_durbin(&r, cfg.order)
}

/// Whiten a whole recording.
pub fn prewhiten(y: &SignalBuffer, w: &Whitener) -> SignalBuffer {
    if w.model().is_silent() {
        warn!("silent whitening model; passing the signal through unchanged");
    }
    SignalBuffer::new(w.apply(y.samples()), y.sample_rate())
        .expect("filtering a finite signal with a stable model stays finite")
}
