use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{OverlapConfig, StftConfig};
use crate::harmonic::PitchSearchConfig;
use crate::joint::JointConfig;
use crate::segmentation::{SegmentGrid, StochasticConfig};
use crate::whitening::NoiseEstimateConfig;

/// All tunables of the decomposition. Every field has a default, so a config
/// file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate: f64,
    /// Subsegment length of both segmentation grids.
    pub n_min_ms: f64,
    pub voiced_min_ms: f64,
    pub voiced_max_ms: f64,
    pub stochastic_min_ms: f64,
    pub stochastic_max_ms: f64,
    /// Time-domain filter size `M` and its hop, in samples.
    pub filter_len: usize,
    pub filter_hop: usize,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    pub max_harmonics: usize,
    pub whitener_order: usize,
    pub residual_order: usize,
    pub stochastic_order: usize,
    pub codebook_order: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub noise_frame_ms: f64,
    pub noise_fraction: f64,
    pub spectral_bins: usize,
    pub stft_frame: usize,
    pub stft_hop: usize,
    /// When set, both grids use consecutive segments of this length instead
    /// of the optimal segmentation.
    pub fixed_segmentation_ms: Option<f64>,
    pub codebook_u: Option<PathBuf>,
    pub codebook_c: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000.0,
            n_min_ms: 5.0,
            voiced_min_ms: 20.0,
            voiced_max_ms: 50.0,
            stochastic_min_ms: 15.0,
            stochastic_max_ms: 40.0,
            filter_len: 40,
            filter_hop: 20,
            pitch_min_hz: 60.0,
            pitch_max_hz: 400.0,
            max_harmonics: 10,
            whitener_order: 14,
            residual_order: 14,
            stochastic_order: 28,
            codebook_order: 14,
            max_iters: 10,
            rel_tol: 1e-3,
            noise_frame_ms: 20.0,
            noise_fraction: 0.1,
            spectral_bins: 512,
            stft_frame: 256,
            stft_hop: 128,
            fixed_segmentation_ms: None,
            codebook_u: None,
            codebook_c: None,
            seed: 0,
        }
    }
}

fn ms_to_samples(ms: f64, rate: f64, what: &str) -> Result<usize> {
    let s = ms * 1e-3 * rate;
    if !(s >= 1.0) || (s - s.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{what} = {ms} ms is not a whole number of samples at {rate} Hz"
        )));
    }
    Ok(s.round() as usize)
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn n_min(&self) -> Result<usize> {
        ms_to_samples(self.n_min_ms, self.sample_rate, "n_min_ms")
    }

    /// Allowed sizes in subsegments for a `[min_ms, max_ms]` range.
    fn range(&self, min_ms: f64, max_ms: f64, what: &str) -> Result<(usize, usize)> {
        let n_min = self.n_min()?;
        let lo = ms_to_samples(min_ms, self.sample_rate, what)?;
        let hi = ms_to_samples(max_ms, self.sample_rate, what)?;
        if lo % n_min != 0 || hi % n_min != 0 || lo > hi {
            return Err(Error::Config(format!(
                "{what} range {min_ms}..{max_ms} ms must be ordered multiples of n_min ({n_min} samples)"
            )));
        }
        Ok((lo / n_min, hi / n_min))
    }

    pub fn voiced_sizes(&self) -> Result<(usize, usize)> {
        self.range(self.voiced_min_ms, self.voiced_max_ms, "voiced segment")
    }

    pub fn stochastic_sizes(&self) -> Result<(usize, usize)> {
        self.range(self.stochastic_min_ms, self.stochastic_max_ms, "stochastic segment")
    }

    /// Fixed segment size in subsegments, if the fixed baseline is selected.
    pub fn fixed_size(&self) -> Result<Option<usize>> {
        let Some(ms) = self.fixed_segmentation_ms else {
            return Ok(None);
        };
        let n_min = self.n_min()?;
        let len = ms_to_samples(ms, self.sample_rate, "fixed_segmentation_ms")?;
        if len % n_min != 0 || len % self.filter_len != 0 {
            return Err(Error::Config(format!(
                "fixed segment of {len} samples must be a multiple of n_min ({n_min}) and of the filter length ({})",
                self.filter_len
            )));
        }
        Ok(Some(len / n_min))
    }

    pub fn voiced_grid(&self, total: usize) -> Result<SegmentGrid> {
        let (lo, hi) = self.voiced_sizes()?;
        SegmentGrid::for_signal(total, self.n_min()?, lo, hi)
    }

    pub fn stochastic_grid(&self, total: usize) -> Result<SegmentGrid> {
        let (lo, hi) = self.stochastic_sizes()?;
        SegmentGrid::for_signal(total, self.n_min()?, lo, hi)
    }

    pub fn joint(&self) -> JointConfig {
        JointConfig {
            pitch: PitchSearchConfig::from_hz(
                self.pitch_min_hz,
                self.pitch_max_hz,
                self.sample_rate,
                self.max_harmonics,
            ),
            residual_order: self.residual_order,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
        }
    }

    pub fn noise_estimate(&self) -> NoiseEstimateConfig {
        NoiseEstimateConfig {
            frame_ms: self.noise_frame_ms,
            fraction: self.noise_fraction,
            order: self.whitener_order,
        }
    }

    pub fn stochastic(&self) -> StochasticConfig {
        StochasticConfig {
            ar_order: self.stochastic_order,
        }
    }

    pub fn overlap(&self) -> OverlapConfig {
        OverlapConfig {
            frame: self.filter_len,
            hop: self.filter_hop,
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            frame: self.stft_frame,
            hop: self.stft_hop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample_rate must be > 0".into()));
        }
        let n_min = self.n_min()?;
        let (lo, hi) = self.voiced_sizes()?;
        self.stochastic_sizes()?;
        self.overlap()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.stft().validate().map_err(|e| Error::Config(e.to_string()))?;
        for b in lo..=hi {
            if (b * n_min) % self.filter_len != 0 {
                return Err(Error::Config(format!(
                    "filter length {} does not divide the candidate segment length {}",
                    self.filter_len,
                    b * n_min
                )));
            }
        }
        if lo * n_min < self.filter_len {
            return Err(Error::Config(format!(
                "shortest voiced segment ({} samples) is shorter than the filter length {}",
                lo * n_min,
                self.filter_len
            )));
        }
        self.joint()
            .pitch
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.whitener_order == 0
            || self.residual_order == 0
            || self.stochastic_order == 0
            || self.codebook_order == 0
        {
            return Err(Error::Config("AR orders must be >= 1".into()));
        }
        if self.max_iters == 0 || !(self.rel_tol > 0.0) {
            return Err(Error::Config("max_iters must be >= 1 and rel_tol > 0".into()));
        }
        if self.spectral_bins < 2 {
            return Err(Error::Config("spectral_bins must be >= 2".into()));
        }
        if !(self.noise_fraction > 0.0 && self.noise_fraction <= 1.0) {
            return Err(Error::Config("noise_fraction must lie in (0, 1]".into()));
        }
        self.fixed_size()?;
        Ok(())
    }
}
