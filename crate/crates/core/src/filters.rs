//! Linear filters that extract the components: the variable-span Wiener
//! matrix built from a joint diagonalization of the voiced and residual
//! covariances (time domain), and a per-bin Wiener gain applied with a short
//! time Fourier transform (frequency domain).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{forward_fft, inverse_fft, ArModel, Spectrum};
use crate::error::{Error, Result};
use crate::harmonic::HarmonicEstimate;
use crate::joint::residual_covariance;

/// Relative level below which the smallest eigenvalue of `R_x` counts as zero.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Generalized eigenvectors `B` (columns) and eigenvalues of `R_v b = l R_x b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub vectors: DMatrix<f64>,
    /// Descending, clamped at zero.
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    pub h: DMatrix<f64>,
}

impl FilterMatrix {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

fn check_square(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "{name} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
    }
    Ok(())
}

/// Joint diagonalization: `B^T R_x B = I`, `B^T R_v B = diag(lambdas)`.
pub fn joint_diagonalize(r_v: &DMatrix<f64>, r_x: &DMatrix<f64>) -> Result<EigenPair> {
    check_square("R_v", r_v)?;
    check_square("R_x", r_x)?;
    if r_v.shape() != r_x.shape() {
        return Err(Error::InvalidInput(format!(
            "R_v is {}x{} but R_x is {}x{}",
            r_v.nrows(),
            r_v.ncols(),
            r_x.nrows(),
            r_x.ncols()
        )));
    }
    let m = r_x.nrows();
    let r_x = symmetrize(r_x);
    let trace = r_x.trace();
    let min_eig = r_x.clone().symmetric_eigenvalues().min();
    if !(trace > 0.0) || min_eig < PD_TOLERANCE * trace / m as f64 {
        return Err(Error::NotPositiveDefinite(format!(
            "R_x minimum eigenvalue {min_eig:e} with trace {trace:e}"
        )));
    }
    let l = r_x
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R_x".into()))?
        .unpack();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("R_x".into()))?;
    let c = symmetrize(&(&l_inv * symmetrize(r_v) * l_inv.transpose()));
    let eig = c.symmetric_eigen();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let u = DMatrix::from_fn(m, m, |r, k| eig.eigenvectors[(r, idx[k])]);
    let lambdas = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    Ok(EigenPair {
        vectors: l_inv.transpose() * u,
        lambdas,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `H = R_v sum_q b_q b_q^T / (1 + l_q)`, which equals `R_v (R_v + R_x)^-1`.
pub fn vslf_wiener(r_v: &DMatrix<f64>, pair: &EigenPair) -> Result<FilterMatrix> {
    let m = pair.vectors.nrows();
    if r_v.shape() != (m, m) {
        return Err(Error::InvalidInput(format!(
            "R_v is {}x{} but the eigenvectors are {m}x{m}",
            r_v.nrows(),
            r_v.ncols()
        )));
    }
    let mut scaled = pair.vectors.clone();
    for (q, mut col) in scaled.column_iter_mut().enumerate() {
        col /= 1.0 + pair.lambdas[q];
    }
    Ok(FilterMatrix {
        h: r_v * scaled * pair.vectors.transpose(),
    })
}

/// `R_v[m, n] = sum_l (A_l^2 / 2) cos(2 pi l f0 (m - n))`.
pub fn voiced_covariance(est: &HarmonicEstimate, m: usize) -> DMatrix<f64> {
    let powers: Vec<f64> = est.real_amplitudes().iter().map(|a| a * a / 2.0).collect();
    let r: Vec<f64> = (0..m)
        .map(|lag| {
            powers
                .iter()
                .enumerate()
                .map(|(l, p)| p * (2.0 * PI * (l + 1) as f64 * est.f0 * lag as f64).cos())
                .sum()
        })
        .collect();
    DMatrix::from_fn(m, m, |i, j| r[i.abs_diff(j)])
}

/// Add `PD_TOLERANCE * trace / M` to the diagonal; a zero matrix borrows its
/// scale from `reference` so the result is still positive definite.
pub fn regularize(r_x: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let m = r_x.nrows() as f64;
    let mut scale = r_x.trace() / m;
    if !(scale > 0.0) {
        scale = (reference.trace() / m).max(f64::MIN_POSITIVE.sqrt());
    }
    // twice the detection threshold so a regularized matrix always passes it
    r_x + DMatrix::identity(r_x.nrows(), r_x.ncols()) * (2.0 * PD_TOLERANCE * scale)
}

/// Frame length and hop of the time-domain overlap-add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub frame: usize,
    pub hop: usize,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self { frame: 40, hop: 20 }
    }
}

impl OverlapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame == 0 || self.hop == 0 || self.hop > self.frame {
            return Err(Error::InvalidInput(format!(
                "need 0 < hop <= frame, got frame {} hop {}",
                self.frame, self.hop
            )));
        }
        Ok(())
    }
}

/// Triangular window, strictly positive on `0..len`.
pub fn triangular_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 1.0 - (2.0 * (n as f64 + 0.5) / len as f64 - 1.0).abs())
        .collect()
}

/// Statistics of one voiced-grid segment.
#[derive(Debug, Clone, PartialEq)]
pub struct VoicedSegment {
    pub start: usize,
    pub len: usize,
    pub harmonic: HarmonicEstimate,
    pub residual_model: ArModel,
}

/// Filter matrix of one segment; `None` for a segment without harmonics.
pub fn segment_filter(seg: &VoicedSegment, m: usize) -> Result<Option<FilterMatrix>> {
    if !seg.harmonic.is_voiced() {
        return Ok(None);
    }
    let r_v = voiced_covariance(&seg.harmonic, m);
    let r_x = regularize(&residual_covariance(&seg.residual_model, m)?, &r_v);
    let pair = joint_diagonalize(&r_v, &r_x)?;
    vslf_wiener(&r_v, &pair).map(Some)
}

/// Frame starts inside `[0, len)`: every `hop` samples, plus one frame flush
/// with the end when the hops do not land there.
fn frame_starts(len: usize, frame: usize, hop: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=(len - frame) / hop).map(|k| k * hop).collect();
    if starts.last() != Some(&(len - frame)) {
        starts.push(len - frame);
    }
    starts
}

/// Apply one `M x M` filter per segment over overlapping frames that stay
/// inside the segment, combined with a triangular window and normalized by
/// the window sum. Segments without harmonics give zeros.
pub fn filter_segments(
    y: &[f64],
    segments: &[(usize, usize, Option<FilterMatrix>)],
    cfg: &OverlapConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let m = cfg.frame;
    let window = triangular_window(m);
    let pieces: Vec<(usize, Vec<f64>)> = segments
        .par_iter()
        .filter_map(|(start, len, h)| h.as_ref().map(|h| (*start, *len, h)))
        .map(|(start, len, h)| {
            if start + len > y.len() {
                return Err(Error::InvalidInput(format!(
                    "segment {start}+{len} runs past the signal ({} samples)",
                    y.len()
                )));
            }
            if len < m {
                return Err(Error::TooShort { needed: m, got: len });
            }
            if h.dim() != m {
                return Err(Error::InvalidInput(format!(
                    "filter is {0}x{0}, frame is {m}",
                    h.dim()
                )));
            }
            let mut acc = vec![0.0; len];
            let mut norm = vec![0.0; len];
            for f in frame_starts(len, m, cfg.hop) {
                let frame = nalgebra::DVector::from_column_slice(&y[start + f..start + f + m]);
                let out = &h.h * frame;
                for n in 0..m {
                    acc[f + n] += window[n] * out[n];
                    norm[f + n] += window[n];
                }
            }
            Ok((start, acc.iter().zip(&norm).map(|(a, w)| a / w).collect()))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; y.len()];
    for (start, piece) in pieces {
        out[start..start + piece.len()].copy_from_slice(&piece);
    }
    Ok(out)
}

/// Voiced component from per-segment statistics.
pub fn extract_voiced(y: &[f64], segments: &[VoicedSegment], cfg: &OverlapConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let filters = segments
        .par_iter()
        .map(|s| segment_filter(s, cfg.frame).map(|h| (s.start, s.len, h)))
        .collect::<Result<Vec<_>>>()?;
    filter_segments(y, &filters, cfg)
}

/// `phi_u / (phi_u + phi_c)` per bin, 0 where both vanish.
pub fn wiener_unvoiced_gain(
    sigma_u2: f64,
    shape_u: &Spectrum,
    sigma_c2: f64,
    shape_c: &Spectrum,
) -> Result<Vec<f64>> {
    if shape_u.bins() != shape_c.bins() {
        return Err(Error::GridMismatch(shape_u.bins(), shape_c.bins()));
    }
    if !(sigma_u2 >= 0.0 && sigma_c2 >= 0.0) {
        return Err(Error::InvalidInput("excitation variances must be >= 0".into()));
    }
    Ok(shape_u
        .values()
        .iter()
        .zip(shape_c.values())
        .map(|(u, c)| {
            let pu = sigma_u2 * u;
            let pc = sigma_c2 * c;
            if pu + pc > 0.0 {
                (pu / (pu + pc)).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect())
}

/// Frame length and hop of the frequency-domain filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame: 256,
            hop: 128,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame < 2 || !self.frame.is_multiple_of(2) || self.hop * 2 != self.frame {
            return Err(Error::InvalidInput(format!(
                "frequency-domain filter needs an even frame and half-frame hop, got {}/{}",
                self.frame, self.hop
            )));
        }
        Ok(())
    }
}

/// Periodic square-root Hann window.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).sqrt())
        .collect()
}

/// Gain curve (full circle, any grid) for one stochastic-grid segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSegment {
    pub start: usize,
    pub len: usize,
    pub gains: Vec<f64>,
}

/// Gains on a `frame`-point grid, with bins above Nyquist mirrored.
fn frame_gains(gains: &[f64], frame: usize) -> Result<Vec<f64>> {
    let g = Spectrum::new(gains.to_vec())?.resample(frame);
    let mut out = g.clone();
    for k in 1..frame / 2 {
        out[frame - k] = g[k];
    }
    Ok(out)
}

/// Frequency-domain filtering on a global frame grid (frames start at
/// `j * hop - hop`). Each segment filters every frame that overlaps it with
/// its own gains and keeps only the output samples that fall inside it.
pub fn extract_unvoiced(x: &[f64], segments: &[GainSegment], cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (f_len, hop) = (cfg.frame, cfg.hop);
    let window = sqrt_hann(f_len);
    let fft = forward_fft(f_len);
    let ifft = inverse_fft(f_len);
    let pieces: Vec<(usize, Vec<f64>)> = segments
        .par_iter()
        .map(|seg| {
            if seg.start + seg.len > x.len() {
                return Err(Error::InvalidInput(format!(
                    "segment {}+{} runs past the signal ({} samples)",
                    seg.start,
                    seg.len,
                    x.len()
                )));
            }
            let gains = frame_gains(&seg.gains, f_len)?;
            let (s0, s1) = (seg.start as isize, (seg.start + seg.len) as isize);
            let mut acc = vec![0.0; seg.len];
            if seg.len == 0 {
                return Ok((seg.start, acc));
            }
            // frames [j*hop - hop, j*hop - hop + frame) that overlap [s0, s1)
            let first = (s0 / hop as isize).max(0);
            let last = (s1 - 1) / hop as isize + 1;
            let mut buf = vec![Complex64::new(0.0, 0.0); f_len];
            for j in first..=last {
                let fs = j * hop as isize - hop as isize;
                for (n, b) in buf.iter_mut().enumerate() {
                    let i = fs + n as isize;
                    let v = if i >= 0 && (i as usize) < x.len() { x[i as usize] } else { 0.0 };
                    *b = Complex64::new(v * window[n], 0.0);
                }
                fft.process(&mut buf);
                for (b, g) in buf.iter_mut().zip(&gains) {
                    *b *= g;
                }
                ifft.process(&mut buf);
                for (n, b) in buf.iter().enumerate() {
                    let i = fs + n as isize;
                    if i >= s0 && i < s1 {
                        acc[(i - s0) as usize] += b.re / f_len as f64 * window[n];
                    }
                }
            }
            Ok((seg.start, acc))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; x.len()];
    for (start, piece) in pieces {
        out[start..start + piece.len()].copy_from_slice(&piece);
    }
    Ok(out)
}
