//! Shared signal types and the numeric primitives the rest of the crate is
//! built on: autocorrelation AR fitting, AR power spectra, periodograms and
//! the Itakura-Saito spectral distance.
//!
//! AR polynomials use the convention `A(z) = 1 + sum_i a_i z^-i`, so an
//! AR(1) process `u(n) = 0.9 u(n-1) + e(n)` has `coeffs == [-0.9]`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default size of the uniform spectral grid.
pub const DEFAULT_SPECTRAL_BINS: usize = 512;

/// Floor applied to energies and power values before taking logarithms.
pub const ENERGY_FLOOR: f64 = 1e-12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Mono sampled audio.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBuffer {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl SignalBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    /// Mean square value.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    /// Same sample rate, new content.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate)
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// All-pole model: coefficient vector plus excitation variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub coeffs: Vec<f64>,
    pub excitation_variance: f64,
}

impl ArModel {
    pub fn new(coeffs: Vec<f64>, excitation_variance: f64) -> Result<Self> {
        if !(excitation_variance >= 0.0 && excitation_variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "excitation variance must be finite and >= 0, got {excitation_variance}"
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite AR coefficient".into()));
        }
        Ok(Self {
            coeffs,
            excitation_variance,
        })
    }

    /// Zero coefficients and zero variance; what a fit on a silent slice returns.
    pub fn silent(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order],
            excitation_variance: 0.0,
        }
    }

    /// Order-0 model, i.e. white noise of the given variance.
    pub fn white(variance: f64) -> Self {
        Self {
            coeffs: Vec::new(),
            excitation_variance: variance,
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_silent(&self) -> bool {
        self.excitation_variance == 0.0
    }

    /// `[1, a_1, ..., a_P]`
    pub fn polynomial(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.coeffs.len() + 1);
        p.push(1.0);
        p.extend_from_slice(&self.coeffs);
        p
    }

    /// `A(e^{jw}) = 1 + sum_i a_i e^{-jwi}`
    pub fn response(&self, omega: f64) -> Complex64 {
        polynomial_response(&self.coeffs, omega)
    }

    /// Reflection coefficients via step-down recursion, `None` if any has
    /// magnitude >= 1 (the polynomial is not minimum phase).
    pub fn reflection_coefficients(&self) -> Option<Vec<f64>> {
        let p = self.coeffs.len();
        let mut a = self.coeffs.clone();
        let mut ks = vec![0.0; p];
        for m in (0..p).rev() {
            let k = a[m];
            if !(k.abs() < 1.0) {
                return None;
            }
            ks[m] = k;
            let denom = 1.0 - k * k;
            let prev = a.clone();
            for i in 0..m {
                a[i] = (prev[i] - k * prev[m - 1 - i]) / denom;
            }
            a.truncate(m);
        }
        Some(ks)
    }

    pub fn is_stable(&self) -> bool {
        self.reflection_coefficients().is_some()
    }

    /// Same shape, unit excitation variance.
    pub fn unit_gain(&self) -> Self {
        Self {
            coeffs: self.coeffs.clone(),
            excitation_variance: 1.0,
        }
    }
}

fn polynomial_response(coeffs: &[f64], omega: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -omega);
    let mut z = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(1.0, 0.0);
    for &c in coeffs {
        z *= step;
        acc += z * c;
    }
    acc
}

/// Power values on the uniform grid `w_k = 2 pi k / K`, `k = 0..K-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "spectrum needs at least 2 bins, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "spectrum bin {i} is negative or non-finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn flat(value: f64, bins: usize) -> Result<Self> {
        Self::new(vec![value; bins])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn omega(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.values.len() as f64
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Linear interpolation onto a grid of `bins` points, wrapping at 2 pi.
    pub fn resample(&self, bins: usize) -> Vec<f64> {
        let k_src = self.values.len();
        if bins == k_src {
            return self.values.clone();
        }
        (0..bins)
            .map(|k| {
                let pos = k as f64 * k_src as f64 / bins as f64;
                let lo = pos.floor() as usize % k_src;
                let hi = (lo + 1) % k_src;
                let t = pos - pos.floor();
                self.values[lo] * (1.0 - t) + self.values[hi] * t
            })
            .collect()
    }
}

/// Biased autocorrelation `r(k) = (1/N) sum_n x(n) x(n+k)` for `k = 0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    (0..=max_lag)
        .map(|k| {
            if k >= n {
                0.0
            } else {
                x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
            }
        })
        .collect()
}

/// Levinson-Durbin recursion on an autocorrelation sequence `r[0..=order]`.
///
/// Stops early (remaining coefficients zero) once the prediction error
/// collapses, so the result is always minimum phase.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<ArModel> {
    if r.len() < order + 1 {
        return Err(Error::InvalidInput(format!(
            "need {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) {
        return Ok(ArModel::silent(order));
    }
    let mut a = vec![0.0; order];
    let mut err = r[0];
    let mut prev = vec![0.0; order];
    for m in 0..order {
        if err <= r[0] * 1e-13 {
            break;
        }
        let mut acc = r[m + 1];
        for i in 0..m {
            acc += a[i] * r[m - i];
        }
        let k = (-acc / err).clamp(-1.0 + 1e-9, 1.0 - 1e-9);
        prev[..m].copy_from_slice(&a[..m]);
        a[m] = k;
        for i in 0..m {
            a[i] = prev[i] + k * prev[m - 1 - i];
        }
        err *= 1.0 - k * k;
    }
    ArModel::new(a, err.max(0.0))
}

/// Autocorrelation-method AR fit.
pub fn ar_fit(x: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::InvalidInput("AR order must be >= 1".into()));
    }
    if x.len() <= order {
        return Err(Error::TooShort {
            needed: order + 1,
            got: x.len(),
        });
    }
    let r = autocorrelation(x, order);
    levinson_durbin(&r, order)
}

/// `sigma^2 / |A(e^{jw_k})|^2` on a `bins`-point grid.
pub fn ar_psd(model: &ArModel, bins: usize) -> Result<Spectrum> {
    if bins < 2 {
        return Err(Error::InvalidInput(format!(
            "spectrum needs at least 2 bins, got {bins}"
        )));
    }
    if !model.is_stable() {
        return Err(Error::UnstableModel);
    }
    let values = ar_response_power(&model.coeffs, bins)
        .into_iter()
        .map(|mag2| model.excitation_variance / mag2)
        .collect();
    Spectrum::new(values)
}

/// `|A(e^{jw_k})|^2` on a `bins`-point grid.
pub(crate) fn ar_response_power(coeffs: &[f64], bins: usize) -> Vec<f64> {
    if bins > 4 * (coeffs.len() + 1) {
        let mut buf = vec![Complex64::new(0.0, 0.0); bins];
        buf[0].re = 1.0;
        for (i, &c) in coeffs.iter().enumerate() {
            buf[(i + 1) % bins].re += c;
        }
        forward_fft(bins).process(&mut buf);
        buf.iter().map(|z| z.norm_sqr()).collect()
    } else {
        (0..bins)
            .map(|k| {
                let w = 2.0 * std::f64::consts::PI * k as f64 / bins as f64;
                polynomial_response(coeffs, w).norm_sqr()
            })
            .collect()
    }
}

/// Itakura-Saito distance averaged over bins.
pub fn itakura_saito(reference: &Spectrum, model: &Spectrum) -> Result<f64> {
    if reference.bins() != model.bins() {
        return Err(Error::GridMismatch(reference.bins(), model.bins()));
    }
    if let Some(i) = model.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroModelBin(i));
    }
    Ok(is_distance_unchecked(reference.values(), model.values()))
}

pub(crate) fn is_distance_unchecked(reference: &[f64], model: &[f64]) -> f64 {
    let sum: f64 = reference
        .iter()
        .zip(model)
        .map(|(&r, &m)| {
            let q = r.max(f64::MIN_POSITIVE) / m;
            q - q.ln() - 1.0
        })
        .sum();
    (sum / reference.len() as f64).max(0.0)
}

/// Periodogram `|DFT(x)|^2 / N`, zero-padded (or truncated) to `bins`.
pub fn power_spectrum(x: &[f64], bins: usize) -> Result<Spectrum> {
    if x.is_empty() {
        return Err(Error::InvalidInput("empty slice".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidInput(format!(
            "spectrum needs at least 2 bins, got {bins}"
        )));
    }
    let used = x.len().min(bins);
    let mut buf: Vec<Complex64> = x[..used]
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(bins)
        .collect();
    forward_fft(bins).process(&mut buf);
    let scale = 1.0 / used as f64;
    Spectrum::new(buf.iter().map(|z| z.norm_sqr() * scale).collect())
}

/// FIR filter with polynomial `[1, coeffs..]`, zero initial conditions.
pub(crate) fn fir_filter(x: &[f64], coeffs: &[f64], gain: f64) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let mut acc = x[n];
            for (i, &c) in coeffs.iter().enumerate() {
                if n > i {
                    acc += c * x[n - i - 1];
                }
            }
            acc * gain
        })
        .collect()
}
