//! Harmonic (voiced) model: Fourier matrices, nonlinear least-squares pitch
//! estimation, order selection with voicing detection, amplitude fitting and
//! synthesis.
//!
//! For real signals the conjugate-paired Fourier matrix `Z` spans the same
//! space as the real basis `[cos(l w n), sin(l w n)]`, and the two bases are
//! related by a scaled unitary transform. The hot paths (pitch search,
//! amplitude fitting) work in the real basis with a closed-form Gram matrix;
//! [`fourier_matrix`] and [`ls_amplitudes`] expose the complex form directly.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{forward_fft, ENERGY_FLOOR};
use crate::error::{Error, Result};

/// Largest condition number accepted for the amplitude normal equations.
pub const MAX_CONDITION: f64 = 1e10;

/// Residuals below this share of the segment energy are rounding noise: the
/// refined pitch and `energy - projection` cannot resolve them, so a
/// noiseless fit at the true order and one at a sub-octave would otherwise
/// be ranked by chance.
pub const RSS_RELATIVE_FLOOR: f64 = 1e-10;

/// Pitch, harmonic order and complex amplitudes of one segment.
///
/// `amplitudes` holds `[a_1, conj(a_1), a_2, conj(a_2), ...]`; an empty vector
/// means the segment was judged not voiced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    /// Cycles per sample.
    pub f0: f64,
    pub amplitudes: Vec<Complex64>,
}

impl HarmonicEstimate {
    pub fn unvoiced() -> Self {
        Self {
            f0: 0.0,
            amplitudes: Vec::new(),
        }
    }

    /// Build from real amplitudes `A_l` and phases `psi_l`.
    pub fn from_polar(f0: f64, amps_phases: &[(f64, f64)]) -> Result<Self> {
        let mut amplitudes = Vec::with_capacity(2 * amps_phases.len());
        for &(a, psi) in amps_phases {
            let alpha = Complex64::from_polar(a / 2.0, psi);
            amplitudes.push(alpha);
            amplitudes.push(alpha.conj());
        }
        let est = Self { f0, amplitudes };
        est.validate()?;
        Ok(est)
    }

    pub fn order(&self) -> usize {
        self.amplitudes.len() / 2
    }

    pub fn is_voiced(&self) -> bool {
        !self.amplitudes.is_empty()
    }

    /// Real amplitudes `A_l = 2 |a_l|`.
    pub fn real_amplitudes(&self) -> Vec<f64> {
        self.amplitudes
            .iter()
            .step_by(2)
            .map(|a| 2.0 * a.norm())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitudes.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "amplitude vector must have even length".into(),
            ));
        }
        let order = self.order();
        if order == 0 {
            return Ok(());
        }
        if !(self.f0 > 0.0 && self.f0 < 0.5) {
            return Err(Error::InvalidInput(format!(
                "f0 must lie in (0, 0.5), got {}",
                self.f0
            )));
        }
        if order as f64 * self.f0 >= 0.5 {
            return Err(Error::AboveNyquist { f0: self.f0, order });
        }
        for pair in self.amplitudes.chunks(2) {
            if (pair[0].conj() - pair[1]).norm() > 1e-9 * (1.0 + pair[0].norm()) {
                return Err(Error::InvalidInput(
                    "amplitudes are not conjugate paired".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Search bounds for the pitch estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchSearchConfig {
    /// Cycles per sample.
    pub f0_min: f64,
    pub f0_max: f64,
    /// Coarse grid spacing; `None` uses `0.1 / N` for an `N`-sample segment.
    pub grid_resolution: Option<f64>,
    pub max_order: usize,
    /// Width at which golden-section refinement stops.
    pub refine_tol: f64,
}

impl Default for PitchSearchConfig {
    fn default() -> Self {
        Self::from_hz(60.0, 400.0, 8000.0, 10)
    }
}

impl PitchSearchConfig {
    pub fn from_hz(min_hz: f64, max_hz: f64, sample_rate: f64, max_order: usize) -> Self {
        Self {
            f0_min: min_hz / sample_rate,
            f0_max: max_hz / sample_rate,
            grid_resolution: None,
            max_order,
            refine_tol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.f0_min && self.f0_min < self.f0_max && self.f0_max < 0.5) {
            return Err(Error::InvalidInput(format!(
                "need 0 < f0_min < f0_max < 0.5, got [{}, {}]",
                self.f0_min, self.f0_max
            )));
        }
        if self.max_order == 0 {
            return Err(Error::InvalidInput("max_order must be >= 1".into()));
        }
        if let Some(r) = self.grid_resolution {
            if !(r > 0.0) {
                return Err(Error::InvalidInput("grid_resolution must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn resolution_for(&self, n: usize) -> f64 {
        self.grid_resolution.unwrap_or(0.1 / n as f64)
    }
}

/// Best pitch for one candidate order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderFit {
    pub order: usize,
    pub f0: f64,
    /// Projection energy `y^T Z (Z^H Z)^-1 Z^H y`.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsResult {
    /// One entry per order `1..=fits.len()`.
    pub fits: Vec<OrderFit>,
    /// `||y||^2`
    pub energy: f64,
    pub len: usize,
}

impl NlsResult {
    pub fn fit(&self, order: usize) -> Option<&OrderFit> {
        order.checked_sub(1).and_then(|i| self.fits.get(i))
    }

    /// Residual energy for `order` (0 gives the signal energy), floored at
    /// [`RSS_RELATIVE_FLOOR`] of the energy.
    pub fn rss(&self, order: usize) -> f64 {
        let explained = self.fit(order).map_or(0.0, |f| f.cost);
        (self.energy - explained).max(ENERGY_FLOOR.max(RSS_RELATIVE_FLOOR * self.energy))
    }
}

/// `[z(f0) z*(f0) ... z(L f0) z*(L f0)]` with `M` rows.
pub fn fourier_matrix(f0: f64, order: usize, m: usize) -> Result<DMatrix<Complex64>> {
    if order == 0 {
        return Err(Error::InvalidInput("order must be >= 1".into()));
    }
    if order as f64 * f0 >= 0.5 || f0 <= 0.0 {
        return Err(Error::AboveNyquist { f0, order });
    }
    if m < 2 * order {
        return Err(Error::TooShort {
            needed: 2 * order,
            got: m,
        });
    }
    Ok(DMatrix::from_fn(m, 2 * order, |n, c| {
        let l = (c / 2 + 1) as f64;
        let z = Complex64::from_polar(1.0, 2.0 * PI * l * f0 * n as f64);
        if c % 2 == 0 {
            z
        } else {
            z.conj()
        }
    }))
}

/// Least-squares amplitudes `(Z^H Z)^-1 Z^H y` with conjugate pairing enforced.
pub fn ls_amplitudes(segment: &[f64], z: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    if z.nrows() != segment.len() {
        return Err(Error::InvalidInput(format!(
            "matrix has {} rows but segment has {} samples",
            z.nrows(),
            segment.len()
        )));
    }
    let gram = z.adjoint() * z;
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let y = nalgebra::DVector::from_iterator(
        segment.len(),
        segment.iter().map(|&v| Complex64::new(v, 0.0)),
    );
    let rhs = z.adjoint() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Z^H Z".into()))?;
    let mut alpha: Vec<Complex64> = chol.solve(&rhs).iter().copied().collect();
    for pair in alpha.chunks_mut(2) {
        if pair.len() == 2 {
            let a = (pair[0] + pair[1].conj()) * 0.5;
            pair[0] = a;
            pair[1] = a.conj();
        }
    }
    Ok(alpha)
}

/// Real-valued `sum_l 2 Re(a_l e^{j 2 pi l f0 n})` for `n = 0..len`.
pub fn synthesize(est: &HarmonicEstimate, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if !est.is_voiced() {
        return out;
    }
    for (l, alpha) in est.amplitudes.iter().step_by(2).enumerate() {
        let w = 2.0 * PI * (l + 1) as f64 * est.f0;
        let step = Complex64::from_polar(1.0, w);
        let mut rot = *alpha * 2.0;
        for (n, o) in out.iter_mut().enumerate() {
            if n % 64 == 0 {
                rot = *alpha * 2.0 * Complex64::from_polar(1.0, w * n as f64);
            }
            *o += rot.re;
            rot *= step;
        }
    }
    out
}

/// Sums `D(d) = sum_n e^{j d w n}` for `d = 0..=max_d`, `w = 2 pi f0`.
fn dirichlet_sums(n: usize, f0: f64, max_d: usize) -> Vec<Complex64> {
    let nf = n as f64;
    (0..=max_d)
        .map(|d| {
            let phi = 2.0 * PI * f0 * d as f64;
            let half = 0.5 * phi;
            let s = half.sin();
            if s.abs() < 1e-12 {
                // phi is a multiple of 2 pi, every term is 1
                Complex64::new(nf, 0.0)
            } else {
                Complex64::from_polar((nf * half).sin() / s, half * (nf - 1.0))
            }
        })
        .collect()
}

/// Gram matrix of the real basis `[cos(w n), sin(w n), cos(2wn), ...]`,
/// row-major `2L x 2L`.
fn real_gram(n: usize, f0: f64, order: usize) -> Vec<f64> {
    let dim = 2 * order;
    let d = dirichlet_sums(n, f0, 2 * order);
    let re = |k: isize| d[k.unsigned_abs()].re;
    let im = |k: isize| {
        let v = d[k.unsigned_abs()].im;
        if k < 0 {
            -v
        } else {
            v
        }
    };
    let mut g = vec![0.0; dim * dim];
    for l in 1..=order as isize {
        for m in 1..=order as isize {
            let (cl, sl) = (2 * (l - 1) as usize, 2 * (l - 1) as usize + 1);
            let (cm, sm) = (2 * (m - 1) as usize, 2 * (m - 1) as usize + 1);
            g[cl * dim + cm] = 0.5 * (re(l - m) + re(l + m));
            g[sl * dim + sm] = 0.5 * (re(l - m) - re(l + m));
            g[cl * dim + sm] = 0.5 * (im(l + m) - im(l - m));
            g[sm * dim + cl] = g[cl * dim + sm];
        }
    }
    g
}

/// `(sum_n y cos(l w n), sum_n y sin(l w n))` for `l = 1..=order`.
fn cross_terms(y: &[f64], f0: f64, order: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * order];
    let w = 2.0 * PI * f0;
    let base_step = Complex64::from_polar(1.0, w);
    let mut base = Complex64::new(1.0, 0.0);
    for (n, &v) in y.iter().enumerate() {
        if n % 64 == 0 {
            base = Complex64::from_polar(1.0, w * n as f64);
        }
        let mut z = base;
        for l in 0..order {
            out[2 * l] += v * z.re;
            out[2 * l + 1] += v * z.im;
            z *= base;
        }
        base *= base_step;
    }
    out
}

/// In-place Cholesky of the leading block, returning the lower factor
/// (row-major) and the number of columns factored before breakdown.
fn cholesky_prefix(g: &[f64], dim: usize) -> (Vec<f64>, usize) {
    let mut l = vec![0.0; dim * dim];
    for j in 0..dim {
        let mut s = g[j * dim + j];
        for k in 0..j {
            s -= l[j * dim + k] * l[j * dim + k];
        }
        if !(s > g[j * dim + j] * 1e-10) {
            return (l, j);
        }
        let d = s.sqrt();
        l[j * dim + j] = d;
        for i in j + 1..dim {
            let mut v = g[i * dim + j];
            for k in 0..j {
                v -= l[i * dim + k] * l[j * dim + k];
            }
            l[i * dim + j] = v / d;
        }
    }
    (l, dim)
}

/// Projection energies for orders `1..=k`, where `k` may be below the order
/// implied by `cross` if the Gram matrix degenerates.
fn projection_costs(n: usize, f0: f64, cross: &[f64]) -> Vec<f64> {
    let order = cross.len() / 2;
    let dim = 2 * order;
    let g = real_gram(n, f0, order);
    let (l, good) = cholesky_prefix(&g, dim);
    let mut w = vec![0.0; good];
    let mut costs = Vec::with_capacity(order);
    let mut cum = 0.0;
    for j in 0..good {
        let mut v = cross[j];
        for k in 0..j {
            v -= l[j * dim + k] * w[k];
        }
        w[j] = v / l[j * dim + j];
        cum += w[j] * w[j];
        if j % 2 == 1 {
            costs.push(cum);
        }
    }
    costs
}

fn nyquist_limit(n: usize) -> f64 {
    0.5 - 1.0 / n as f64
}

fn max_order_at(f0: f64, n: usize, cap: usize) -> usize {
    ((nyquist_limit(n) / f0).floor() as usize).min(cap)
}

fn cost_at(y: &[f64], f0: f64, order: usize) -> f64 {
    if order == 0 || max_order_at(f0, y.len(), order) < order {
        return f64::NEG_INFINITY;
    }
    let cross = cross_terms(y, f0, order);
    projection_costs(y.len(), f0, &cross)
        .get(order - 1)
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

fn golden_max(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Nonlinear least-squares pitch estimate for every order `1..=max_order`.
///
/// Coarse evaluation uses one zero-padded FFT whose bins form the pitch grid;
/// each order is then refined by golden-section search over one grid cell on
/// either side of its coarse peak. Ties go to the lower `f0`.
pub fn nls_pitch(segment: &[f64], cfg: &PitchSearchConfig) -> Result<NlsResult> {
    cfg.validate()?;
    let n = segment.len();
    let needed = 2 * cfg.max_order + 1;
    if n < needed {
        return Err(Error::TooShort { needed, got: n });
    }
    let energy: f64 = segment.iter().map(|v| v * v).sum();
    let max_order = max_order_at(cfg.f0_min, n, cfg.max_order);
    if max_order == 0 {
        return Err(Error::InvalidInput(
            "pitch range leaves no harmonic below Nyquist".into(),
        ));
    }

    let fft_len = (1.0 / cfg.resolution_for(n)).ceil().max(n as f64) as usize;
    let fft_len = fft_len.next_power_of_two();
    let mut spec: Vec<Complex64> = segment
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(fft_len)
        .collect();
    forward_fft(fft_len).process(&mut spec);

    let step = 1.0 / fft_len as f64;
    let k_lo = (cfg.f0_min * fft_len as f64).ceil() as usize;
    let k_hi = (cfg.f0_max * fft_len as f64).floor() as usize;
    let mut best: Vec<(f64, f64)> = vec![(f64::NAN, f64::NEG_INFINITY); max_order];
    let mut cross = Vec::with_capacity(2 * max_order);
    for k in k_lo.max(1)..=k_hi {
        let f0 = k as f64 * step;
        let lmax = max_order_at(f0, n, max_order);
        if lmax == 0 {
            continue;
        }
        cross.clear();
        for l in 1..=lmax {
            let bin = spec[l * k];
            cross.push(bin.re);
            cross.push(-bin.im);
        }
        for (i, &c) in projection_costs(n, f0, &cross).iter().enumerate() {
            if c > best[i].1 {
                best[i] = (f0, c);
            }
        }
    }

    let mut fits = Vec::with_capacity(max_order);
    for (i, &(f0c, cc)) in best.iter().enumerate() {
        let order = i + 1;
        if !cc.is_finite() {
            break;
        }
        let limit = nyquist_limit(n) / order as f64;
        let lo = (f0c - step).max(cfg.f0_min);
        let hi = (f0c + step).min(cfg.f0_max).min(limit);
        let (mut f0, mut cost) = (f0c, cc);
        if hi > lo {
            let (fr, cr) = golden_max(lo, hi, cfg.refine_tol, |f| cost_at(segment, f, order));
            if cr > cost {
                f0 = fr;
                cost = cr;
            }
        }
        // Nested column spaces: the best order-L fit can never explain less
        // than the best order-(L-1) fit.
        if let Some(prev) = fits.last() {
            let prev: &OrderFit = prev;
            if cost < prev.cost {
                let c = cost_at(segment, prev.f0, order);
                if c > cost {
                    f0 = prev.f0;
                    cost = c;
                }
                if cost < prev.cost {
                    cost = prev.cost;
                }
            }
        }
        fits.push(OrderFit { order, f0, cost });
    }

    Ok(NlsResult {
        fits,
        energy,
        len: n,
    })
}

/// Penalized criterion `(N/2) ln(RSS/N) + (3/2 + L) ln N` for `L >= 1`, and
/// `(N/2) ln(RSS/N)` for `L = 0`.
pub fn order_criterion(rss: f64, n: usize, order: usize) -> f64 {
    let nf = n as f64;
    let fit = 0.5 * nf * (rss.max(ENERGY_FLOOR) / nf).ln();
    if order == 0 {
        fit
    } else {
        fit + (1.5 + order as f64) * nf.ln()
    }
}

/// Order minimizing [`order_criterion`], with `0` meaning not voiced.
pub fn select_order(nls: &NlsResult) -> usize {
    let mut best = 0;
    let mut best_crit = order_criterion(nls.rss(0), nls.len, 0);
    for fit in &nls.fits {
        let c = order_criterion(nls.rss(fit.order), nls.len, fit.order);
        if c < best_crit {
            best_crit = c;
            best = fit.order;
        }
    }
    best
}

/// Least-squares fit of `order` harmonics of `f0`.
pub fn fit_amplitudes(segment: &[f64], f0: f64, order: usize) -> Result<HarmonicEstimate> {
    if order == 0 {
        return Ok(HarmonicEstimate::unvoiced());
    }
    let n = segment.len();
    if order as f64 * f0 >= 0.5 || f0 <= 0.0 {
        return Err(Error::AboveNyquist { f0, order });
    }
    if n < 2 * order {
        return Err(Error::TooShort {
            needed: 2 * order,
            got: n,
        });
    }
    let dim = 2 * order;
    let g = real_gram(n, f0, order);
    let (l, good) = cholesky_prefix(&g, dim);
    if good < dim {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let diag: Vec<f64> = (0..dim).map(|j| l[j * dim + j]).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = (dmax / dmin).powi(2);
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let cross = cross_terms(segment, f0, order);
    let mut w = vec![0.0; dim];
    for j in 0..dim {
        let mut v = cross[j];
        for k in 0..j {
            v -= l[j * dim + k] * w[k];
        }
        w[j] = v / l[j * dim + j];
    }
    let mut x = vec![0.0; dim];
    for j in (0..dim).rev() {
        let mut v = w[j];
        for k in j + 1..dim {
            v -= l[k * dim + j] * x[k];
        }
        x[j] = v / l[j * dim + j];
    }
    let mut amplitudes = Vec::with_capacity(dim);
    for pair in x.chunks(2) {
        let alpha = Complex64::new(0.5 * pair[0], -0.5 * pair[1]);
        amplitudes.push(alpha);
        amplitudes.push(alpha.conj());
    }
    Ok(HarmonicEstimate { f0, amplitudes })
}
