#![allow(dead_code)]

use std::f64::consts::PI;

use hybrid_decomp::codebook::{train_codebook, training_frames, CodebookKind, ShapeBank};
use hybrid_decomp::dsp::SignalBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const RATE: f64 = 8000.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn white(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// AR process with polynomial `[1, coeffs..]`, unit excitation, burn-in dropped.
pub fn ar_process(coeffs: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let burn = 500;
    let mut out = vec![0.0; n + burn];
    for i in 0..out.len() {
        let mut v: f64 = rng.sample(StandardNormal);
        for (k, c) in coeffs.iter().enumerate() {
            if i > k {
                v -= c * out[i - k - 1];
            }
        }
        out[i] = v;
    }
    out.split_off(burn)
}

pub fn harmonic(f0: f64, amps: &[f64], phases: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|t| {
            amps.iter()
                .zip(phases)
                .enumerate()
                .map(|(l, (a, p))| a * (2.0 * PI * (l + 1) as f64 * f0 * t as f64 + p).cos())
                .sum()
        })
        .collect()
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn scale_to_power(x: &mut [f64], target: f64) {
    let p = power(x);
    if p > 0.0 {
        let g = (target / p).sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Shapes used for the unvoiced bursts (AR polynomials).
pub const UNVOICED_SHAPES: [[f64; 2]; 3] = [[0.9, 0.5], [-0.3, 0.6], [1.3, 0.7]];
/// Shapes used for the additive noise.
pub const NOISE_SHAPES: [[f64; 2]; 2] = [[-0.8, 0.2], [-1.2, 0.5]];

/// Clean synthetic speech and its parts.
pub struct Utterance {
    pub voiced: Vec<f64>,
    pub unvoiced: Vec<f64>,
    pub clean: Vec<f64>,
}

/// Quiet lead-in, then voiced pieces with constant pitch over 120 to 320 ms
/// and short AR bursts in between, all on 40-sample boundaries.
pub fn utterance(seed: u64, len: usize) -> Utterance {
    let mut r = rng(seed);
    let mut voiced = vec![0.0; len];
    let mut unvoiced = vec![0.0; len];
    let mut pos = 800;
    let mut voiced_turn = true;
    while pos < len {
        if voiced_turn {
            let n = (40 * r.gen_range(3..=8)).min(len - pos);
            let f0 = r.gen_range(100.0..250.0) / RATE;
            let order = r.gen_range(3..=6);
            let amps: Vec<f64> = (0..order).map(|l| 0.3 * 0.75f64.powi(l) * r.gen_range(0.7..1.3)).collect();
            let phases: Vec<f64> = (0..order).map(|_| r.gen_range(0.0..2.0 * PI)).collect();
            let piece = harmonic(f0, &amps, &phases, n);
            voiced[pos..pos + n].copy_from_slice(&piece);
            pos += n;
        } else {
            let n = (40 * r.gen_range(1..=3)).min(len - pos);
            let shape = UNVOICED_SHAPES[r.gen_range(0..UNVOICED_SHAPES.len())];
            let mut burst = ar_process(&shape, n, &mut r);
            scale_to_power(&mut burst, 0.01 * r.gen_range(0.5..1.5));
            unvoiced[pos..pos + n].copy_from_slice(&burst);
            pos += n;
        }
        voiced_turn = !voiced_turn;
    }
    let clean = voiced.iter().zip(&unvoiced).map(|(a, b)| a + b).collect();
    Utterance {
        voiced,
        unvoiced,
        clean,
    }
}

/// Colored noise with the first noise shape.
pub fn colored_noise(seed: u64, len: usize) -> Vec<f64> {
    ar_process(&NOISE_SHAPES[0], len, &mut rng(seed))
}

pub fn buffer(x: Vec<f64>) -> SignalBuffer {
    SignalBuffer::new(x, RATE).unwrap()
}

/// Small trained codebooks matching the synthetic generators.
pub fn small_bank(order: usize, size_u: usize, size_c: usize, bins: usize) -> ShapeBank {
    let mut r = rng(99);
    let mut uframes = Vec::new();
    for shape in UNVOICED_SHAPES {
        let x = ar_process(&shape, 4000, &mut r);
        uframes.extend(training_frames(&x, 160));
    }
    let mut cframes = Vec::new();
    for shape in NOISE_SHAPES {
        let x = ar_process(&shape, 4000, &mut r);
        cframes.extend(training_frames(&x, 160));
    }
    let u = train_codebook(&uframes, order, size_u, CodebookKind::Unvoiced, bins, 1).unwrap();
    let c = train_codebook(&cframes, order, size_c, CodebookKind::Noise, bins, 2).unwrap();
    ShapeBank::new(&u.codebook, &c.codebook, bins).unwrap()
}
