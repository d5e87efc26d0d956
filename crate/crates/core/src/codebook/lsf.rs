//! Line spectral frequencies of AR polynomials.
//!
//! For `A(z)` of order `p` the sum and difference polynomials
//! `P(z) = A(z) + z^-(p+1) A(1/z)` and `Q(z) = A(z) - z^-(p+1) A(1/z)` have
//! their zeros on the unit circle, interlaced, when `A` is minimum phase.
//! The LSFs are the `p` zero angles in `(0, pi)` in ascending order; even
//! positions belong to `P`, odd positions to `Q`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Smallest gap kept between neighbouring LSFs when converting back.
pub const MIN_SEPARATION: f64 = 1e-3;

const GRIDS: [usize; 3] = [1024, 8192, 65536];

/// LSFs of `[1, a_1, ..., a_p]` (passed as `a_1..a_p`).
pub fn poly_to_lsf(coeffs: &[f64]) -> Result<Vec<f64>> {
    let p = coeffs.len();
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut a = Vec::with_capacity(p + 2);
    a.push(1.0);
    a.extend_from_slice(coeffs);
    a.push(0.0);
    let sum: Vec<f64> = (0..=p + 1).map(|k| a[k] + a[p + 1 - k]).collect();
    let diff: Vec<f64> = (0..=p + 1).map(|k| a[k] - a[p + 1 - k]).collect();
    let half = (p + 1) as f64 / 2.0;
    let fp = |w: f64| -> f64 {
        sum.iter()
            .enumerate()
            .map(|(k, c)| c * (w * (k as f64 - half)).cos())
            .sum()
    };
    let fq = |w: f64| -> f64 {
        diff.iter()
            .enumerate()
            .map(|(k, c)| c * (w * (half - k as f64)).sin())
            .sum()
    };
    let want_p = p.div_ceil(2);
    let want_q = p / 2;
    for &grid in &GRIDS {
        let rp = interior_zeros(&fp, grid);
        let rq = interior_zeros(&fq, grid);
        if rp.len() == want_p && rq.len() == want_q {
            let mut out = Vec::with_capacity(p);
            for i in 0..want_p {
                out.push(rp[i]);
                if i < want_q {
                    out.push(rq[i]);
                }
            }
            if out.windows(2).all(|w| w[0] < w[1]) {
                return Ok(out);
            }
        }
    }
    Err(Error::UnstableModel)
}

fn interior_zeros(f: &impl Fn(f64) -> f64, grid: usize) -> Vec<f64> {
    let step = PI / grid as f64;
    let mut roots = Vec::new();
    // endpoints hold the trivial zeros, so start and stop half a step inside
    let mut w0 = 0.5 * step;
    let mut f0 = f(w0);
    for i in 1..grid {
        let w1 = (i as f64 + 0.5) * step;
        let f1 = f(w1);
        if f0 == 0.0 {
            roots.push(w0);
        } else if f0 * f1 < 0.0 {
            roots.push(bisect(f, w0, w1, f0));
        }
        w0 = w1;
        f0 = f1;
    }
    roots
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

/// Pull LSFs into `(0, pi)` with at least `MIN_SEPARATION` between neighbours.
pub fn enforce_separation(lsf: &mut [f64]) {
    let p = lsf.len();
    if p == 0 {
        return;
    }
    lsf.sort_by(f64::total_cmp);
    let sep = MIN_SEPARATION.min(PI / (p as f64 + 1.0));
    let mut lower = sep;
    for v in lsf.iter_mut() {
        *v = v.max(lower);
        lower = *v + sep;
    }
    let mut upper = PI - sep;
    for v in lsf.iter_mut().rev() {
        *v = v.min(upper);
        upper = *v - sep;
    }
}

/// AR coefficients `a_1..a_p` from ascending LSFs.
pub fn lsf_to_poly(lsf: &[f64]) -> Vec<f64> {
    let p = lsf.len();
    if p == 0 {
        return Vec::new();
    }
    let mut poly_p = if p.is_multiple_of(2) { vec![1.0, 1.0] } else { vec![1.0] };
    let mut poly_q = if p.is_multiple_of(2) {
        vec![1.0, -1.0]
    } else {
        vec![1.0, 0.0, -1.0]
    };
    for (i, &w) in lsf.iter().enumerate() {
        let section = [1.0, -2.0 * w.cos(), 1.0];
        if i % 2 == 0 {
            poly_p = convolve(&poly_p, &section);
        } else {
            poly_q = convolve(&poly_q, &section);
        }
    }
    (1..=p).map(|k| 0.5 * (poly_p[k] + poly_q[k])).collect()
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}
