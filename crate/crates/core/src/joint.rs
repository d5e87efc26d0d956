//! Iterative joint estimation of the harmonic part and the AR statistics of
//! the residual for one candidate segment.
//!
//! Each pass runs the pitch search and order selection on the whitened
//! segment, fits amplitudes on the unwhitened segment, fits an AR model to the
//! residual and turns that model into the whitener for the next pass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dsp::{ar_fit, ArModel};
use crate::error::{Error, Result};
use crate::harmonic::{
    fit_amplitudes, nls_pitch, select_order, synthesize, HarmonicEstimate, PitchSearchConfig,
};
use crate::whitening::Whitener;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub pitch: PitchSearchConfig,
    /// AR order of the residual model (and of the refreshed whitener).
    pub residual_order: usize,
    pub max_iters: usize,
    /// Relative change of the normalized NLS cost that ends the iteration.
    pub rel_tol: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            pitch: PitchSearchConfig::default(),
            residual_order: 14,
            max_iters: 10,
            rel_tol: 1e-3,
        }
    }
}

/// Harmonic fit, residual and residual AR model of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub harmonic: HarmonicEstimate,
    pub residual_model: ArModel,
    /// `segment - synthesize(harmonic)`
    pub residual: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Explained share of the whitened energy after each accepted pass.
    pub cost_history: Vec<f64>,
}

impl SegmentFit {
    pub fn order(&self) -> usize {
        self.harmonic.order()
    }

    fn unvoiced(segment: &[f64], order: usize, iterations: usize, history: Vec<f64>) -> Result<Self> {
        Ok(Self {
            harmonic: HarmonicEstimate::unvoiced(),
            residual_model: residual_model(segment, order)?,
            residual: segment.to_vec(),
            iterations_used: iterations,
            converged: true,
            cost_history: history,
        })
    }
}

fn residual_model(x: &[f64], order: usize) -> Result<ArModel> {
    let order = order.min(x.len().saturating_sub(1)).max(1);
    ar_fit(x, order)
}

/// Joint estimate starting from a whitener applied to the segment itself.
pub fn joint_estimate(segment: &[f64], initial: &Whitener, cfg: &JointConfig) -> Result<SegmentFit> {
    let whitened = initial.apply(segment);
    joint_estimate_prewhitened(segment, &whitened, cfg)
}

/// Joint estimate when the first-pass whitened segment is already available
/// (for instance a slice of a globally whitened recording).
pub fn joint_estimate_prewhitened(
    segment: &[f64],
    whitened: &[f64],
    cfg: &JointConfig,
) -> Result<SegmentFit> {
    if segment.len() != whitened.len() {
        return Err(Error::InvalidInput(format!(
            "segment has {} samples but whitened copy has {}",
            segment.len(),
            whitened.len()
        )));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be >= 1".into()));
    }
    let mut yw = whitened.to_vec();
    let mut history: Vec<f64> = Vec::new();
    let mut current: Option<(HarmonicEstimate, Vec<f64>, ArModel)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let nls = nls_pitch(&yw, &cfg.pitch)?;
        let order = select_order(&nls);
        if order == 0 {
            return SegmentFit::unvoiced(segment, cfg.residual_order, iter, history);
        }
        let fit = nls.fit(order).expect("selected order has a fit");
        let normalized = if nls.energy > 0.0 {
            fit.cost / nls.energy
        } else {
            0.0
        };
        if let Some(&prev) = history.last() {
            if normalized < prev {
                // keep the previous pass
                converged = true;
                break;
            }
        }
        let harmonic = fit_amplitudes(segment, fit.f0, order)?;
        let voiced = synthesize(&harmonic, segment.len());
        let residual: Vec<f64> = segment.iter().zip(&voiced).map(|(y, v)| y - v).collect();
        let model = residual_model(&residual, cfg.residual_order)?;
        let done = history
            .last()
            .is_some_and(|&prev| (normalized - prev).abs() <= cfg.rel_tol * prev.abs());
        history.push(normalized);
        yw = Whitener::new(model.clone())?.apply(segment);
        current = Some((harmonic, residual, model));
        if done {
            converged = true;
            break;
        }
    }

    let (harmonic, residual, residual_model) = current.expect("at least one voiced pass");
    Ok(SegmentFit {
        harmonic,
        residual_model,
        residual,
        iterations_used: iterations,
        converged,
        cost_history: history,
    })
}

/// Theoretical autocovariance of an AR process for lags `0..len`.
pub fn ar_autocovariance(model: &ArModel, len: usize) -> Result<Vec<f64>> {
    if !model.is_stable() {
        return Err(Error::UnstableModel);
    }
    let p = model.order();
    let a = &model.coeffs;
    let var = model.excitation_variance;
    // r(k) + sum_i a_i r(|k - i|) = var * delta(k), k = 0..=p
    let mut m = DMatrix::<f64>::zeros(p + 1, p + 1);
    for k in 0..=p {
        m[(k, k)] += 1.0;
        for i in 1..=p {
            let lag = (k as isize - i as isize).unsigned_abs();
            m[(k, lag)] += a[i - 1];
        }
    }
    let mut rhs = DVector::<f64>::zeros(p + 1);
    rhs[0] = var;
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or(Error::UnstableModel)?;
    let mut r: Vec<f64> = sol.iter().copied().collect();
    while r.len() < len {
        let k = r.len();
        let v: f64 = (1..=p).map(|i| -a[i - 1] * r[k - i]).sum();
        r.push(v);
    }
    r.truncate(len.max(1));
    Ok(r)
}

/// `M x M` Toeplitz covariance of the AR process.
pub fn residual_covariance(model: &ArModel, m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::InvalidInput("covariance size must be >= 1".into()));
    }
    let r = ar_autocovariance(model, m)?;
    Ok(DMatrix::from_fn(m, m, |i, j| r[i.abs_diff(j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn white_noise_is_unvoiced() {
        let y = white(320, 1);
        let fit = joint_estimate(&y, &Whitener::identity(), &JointConfig::default()).unwrap();
        assert_eq!(fit.order(), 0);
        assert_eq!(fit.residual, y);
        assert_eq!(fit.iterations_used, 1);
        assert!(fit.converged);
    }

    #[test]
    fn zero_segment_is_silent() {
        let fit = joint_estimate(&[0.0; 200], &Whitener::identity(), &JointConfig::default()).unwrap();
        assert_eq!(fit.order(), 0);
        assert!(fit.residual_model.is_silent());
    }

    #[test]
    fn harmonic_plus_ar_noise() {
        let n = 320;
        let f0 = 0.03;
        let amps = [1.0, 0.8, 0.6, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let clean: Vec<f64> = (0..n)
            .map(|i| {
                amps.iter()
                    .enumerate()
                    .map(|(l, a)| a * (2.0 * PI * (l + 1) as f64 * f0 * i as f64 + l as f64).cos())
                    .sum()
            })
            .collect();
        let p_sig = clean.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // AR(1) with coefficient -0.7 scaled to 10 dB SNR
        let mut noise = vec![0.0; n + 500];
        for i in 1..noise.len() {
            noise[i] = 0.7 * noise[i - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        let noise = noise.split_off(500);
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let g = (p_sig / p_noise / 10.0).sqrt();
        let y: Vec<f64> = clean.iter().zip(&noise).map(|(s, c)| s + g * c).collect();

        let initial = Whitener::new(ArModel::new(vec![-0.7], g * g).unwrap()).unwrap();
        let cfg = JointConfig {
            residual_order: 1,
            ..Default::default()
        };
        let fit = joint_estimate(&y, &initial, &cfg).unwrap();
        assert!(fit.order() >= 1);
        assert!((fit.harmonic.f0 - f0).abs() < cfg.pitch.resolution_for(n), "{}", fit.harmonic.f0);
        assert!((fit.residual_model.coeffs[0] + 0.7).abs() < 0.1, "{:?}", fit.residual_model.coeffs);

        let synth = synthesize(&fit.harmonic, n);
        for i in 0..n {
            assert!((synth[i] + fit.residual[i] - y[i]).abs() < 1e-12);
        }
        for w in fit.cost_history.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn residual_of_voiced_fit_is_unvoiced() {
        let n = 240;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                (2.0 * PI * 0.02 * i as f64).cos()
                    + 0.5 * (2.0 * PI * 0.04 * i as f64).sin()
                    + 0.05 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let cfg = JointConfig::default();
        let fit = joint_estimate(&y, &Whitener::identity(), &cfg).unwrap();
        assert!(fit.order() >= 1);
        let again = joint_estimate(&fit.residual, &Whitener::identity(), &cfg).unwrap();
        assert_eq!(again.order(), 0);
    }

    #[test]
    fn mismatched_whitened_length_rejected() {
        assert!(joint_estimate_prewhitened(&[0.0; 100], &[0.0; 99], &JointConfig::default()).is_err());
    }

    #[test]
    fn covariance_examples() {
        let r = residual_covariance(&ArModel::white(2.0), 3).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3) * 2.0);

        let m = ArModel::new(vec![-0.9], 1.0).unwrap();
        let r = residual_covariance(&m, 6).unwrap();
        for i in 0..6usize {
            for j in 0..6usize {
                let expect = 0.9f64.powi(i.abs_diff(j) as i32) / (1.0 - 0.81);
                assert!((r[(i, j)] - expect).abs() < 1e-9);
            }
        }
        let min = r.symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0);

        let unstable = ArModel::new(vec![-1.5], 1.0).unwrap();
        assert!(residual_covariance(&unstable, 4).is_err());
    }

    #[test]
    fn covariance_matches_sample_autocovariance() {
        let m = ArModel::new(vec![-1.2, 0.6], 1.0).unwrap();
        let r = ar_autocovariance(&m, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 400_000;
        let mut x = vec![0.0; n];
        for i in 2..n {
            x[i] = 1.2 * x[i - 1] - 0.6 * x[i - 2] + rng.sample::<f64, _>(StandardNormal);
        }
        for k in 0..5 {
            let s: f64 = x[1000..n - k].iter().zip(&x[1000 + k..]).map(|(a, b)| a * b).sum::<f64>()
                / (n - 1000 - k) as f64;
            assert!((s - r[k]).abs() < 0.05 * r[0], "lag {k}: {s} vs {}", r[k]);
        }
    }
}
