//! Acceptance suite. Run with `cargo test -p hybrid-decomp --test acceptance`;
//! prints one PASS/FAIL line per criterion and exits non-zero on any failure.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use common::*;
use hybrid_decomp::codebook::{estimate_variances, search_shapes, ShapeBank};
use hybrid_decomp::dsp::{ar_fit, ar_psd, autocorrelation, itakura_saito, ArModel, SignalBuffer, Spectrum};
use hybrid_decomp::filters::{
    extract_unvoiced, filter_segments, joint_diagonalize, voiced_covariance, vslf_wiener, FilterMatrix,
    GainSegment, OverlapConfig, StftConfig,
};
use hybrid_decomp::harmonic::{nls_pitch, select_order, HarmonicEstimate, PitchSearchConfig};
use hybrid_decomp::joint::{joint_estimate, residual_covariance, JointConfig};
use hybrid_decomp::pipeline::{decompose, lsd, mix_at_isnr, seg_snr, PipelineConfig};
use hybrid_decomp::segmentation::{dp_segment, CostTable, SegmentGrid};
use hybrid_decomp::whitening::{initial_noise_estimate, NoiseEstimateConfig, Whitener};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

fn brute_force(table: &CostTable, s_total: usize, allowed: &[usize]) -> f64 {
    fn rec(s: usize, acc: f64, t: &CostTable, s_total: usize, allowed: &[usize], best: &mut f64) {
        if s == s_total {
            *best = best.min(acc);
            return;
        }
        for &b in allowed {
            if s + b <= s_total {
                rec(s + b, acc + t.get(s, b), t, s_total, allowed, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(0, 0.0, table, s_total, allowed, &mut best);
    best
}

fn dp_vs_brute_force() -> Outcome {
    let mut r = rng(1);
    let start = Instant::now();
    let mut mismatches = 0;
    let mut compared = 0;
    for _ in 0..100 {
        let s_total = r.gen_range(1..=14);
        let mut allowed: Vec<usize> = (1..=10).filter(|_| r.gen_bool(0.5)).collect();
        if allowed.is_empty() {
            allowed.push(r.gen_range(1..=10));
        }
        let grid = SegmentGrid::new(40, s_total, 1, 10).unwrap();
        let mut t = CostTable::new(s_total, 10);
        for s in 0..s_total {
            for &b in &allowed {
                if s + b <= s_total {
                    t.set(s, b, r.gen_range(-10.0..10.0)).unwrap();
                }
            }
        }
        let oracle = brute_force(&t, s_total, &allowed);
        let dp = dp_segment(&t, &grid).map(|x| x.total_cost).unwrap_or(f64::INFINITY);
        compared += 1;
        if dp != oracle {
            mismatches += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        mismatches == 0 && el < Duration::from_secs(5),
        format!("{mismatches}/{compared} mismatches, {:.2} s", el.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2, 3

fn random_pairs() -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let mut r = rng(2);
    let m = 40;
    (0..100)
        .map(|k| {
            if k % 2 == 0 {
                let a = DMatrix::from_fn(m, m, |_, _| r.sample::<f64, _>(StandardNormal));
                let r_x = &a * a.transpose() + DMatrix::identity(m, m) * 0.1;
                let rank = r.gen_range(0..=10);
                let b = DMatrix::from_fn(m, rank, |_, _| r.sample::<f64, _>(StandardNormal));
                (&b * b.transpose(), r_x)
            } else {
                let order = r.gen_range(1..=5);
                let f0 = r.gen_range(60.0..400.0) / RATE;
                let order = order.min(((0.5 / f0) as usize).saturating_sub(1).max(1));
                let amps: Vec<(f64, f64)> = (0..order).map(|_| (r.gen_range(0.1..2.0), 0.0)).collect();
                let est = HarmonicEstimate::from_polar(f0, &amps).unwrap();
                let k1: f64 = r.gen_range(-0.8..0.8);
                let model = ArModel::new(vec![k1, 0.2 * k1 * k1], r.gen_range(0.1..2.0)).unwrap();
                (voiced_covariance(&est, m), residual_covariance(&model, m).unwrap())
            }
        })
        .collect()
}

fn joint_diagonalization_invariants(pairs: &[(DMatrix<f64>, DMatrix<f64>)]) -> Outcome {
    let mut worst_x: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for (r_v, r_x) in pairs {
        let p = joint_diagonalize(r_v, r_x).unwrap();
        let b = &p.vectors;
        let m = r_x.nrows();
        let ident = b.transpose() * r_x * b;
        worst_x = worst_x.max((&ident - DMatrix::<f64>::identity(m, m)).norm() / (m as f64).sqrt());
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(p.lambdas.clone()));
        let diag = b.transpose() * r_v * b;
        worst_v = worst_v.max((&diag - &lam).norm() / lam.norm().max(1.0));
    }
    outcome(
        worst_x < 1e-8 && worst_v < 1e-8,
        format!("max rel error B'RxB-I {worst_x:.2e}, B'RvB-L {worst_v:.2e}"),
    )
}

fn vslf_identity(pairs: &[(DMatrix<f64>, DMatrix<f64>)]) -> Outcome {
    let mut worst: f64 = 0.0;
    for (r_v, r_x) in pairs {
        let h = vslf_wiener(r_v, &joint_diagonalize(r_v, r_x).unwrap()).unwrap().h;
        let closed = r_v * (r_v + r_x).try_inverse().unwrap();
        let scale = closed.norm().max(h.norm());
        if scale > 0.0 {
            worst = worst.max((&h - &closed).norm() / scale);
        }
    }
    outcome(worst < 1e-8, format!("max rel error {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

fn random_harmonic(r: &mut ChaCha8Rng, n: usize) -> (f64, Vec<f64>) {
    let order = r.gen_range(2..=8);
    let f0_hz = r.gen_range(60.0..400.0);
    let f0 = f0_hz / RATE;
    let amps: Vec<f64> = (0..order).map(|_| r.gen_range(0.2..1.0)).collect();
    let phases: Vec<f64> = (0..order).map(|_| r.gen_range(0.0..2.0 * PI)).collect();
    (f0_hz, harmonic(f0, &amps, &phases, n))
}

fn estimate_f0_hz(x: &[f64]) -> Option<f64> {
    let nls = nls_pitch(x, &PitchSearchConfig::default()).unwrap();
    let order = select_order(&nls);
    nls.fit(order).map(|f| f.f0 * RATE)
}

fn pitch_accuracy() -> Outcome {
    let mut r = rng(4);
    let n = 320;
    let mut max_err: f64 = 0.0;
    let mut octave = 0;
    for _ in 0..200 {
        let (f0, x) = random_harmonic(&mut r, n);
        match estimate_f0_hz(&x) {
            Some(est) => {
                let err = (est - f0).abs();
                max_err = max_err.max(err);
                if err > 0.05 * f0 {
                    octave += 1;
                }
            }
            None => octave += 1,
        }
    }
    let mut gross = 0;
    for _ in 0..200 {
        let (f0, x) = random_harmonic(&mut r, n);
        let p = power(&x);
        let noise = white(n, &mut r);
        let g = (p / (10.0 * power(&noise))).sqrt();
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + g * b).collect();
        match estimate_f0_hz(&y) {
            Some(est) if (est - f0).abs() <= 0.05 * f0 => {}
            _ => gross += 1,
        }
    }
    let rate = gross as f64 / 200.0;
    outcome(
        max_err < 0.1 && octave == 0 && rate <= 0.05,
        format!("noiseless max error {max_err:.2e} Hz, {octave} gross/octave errors; 10 dB gross-error rate {:.1}%", 100.0 * rate),
    )
}

// ---------------------------------------------------------------- 5

fn voicing_detection() -> Outcome {
    let mut r = rng(5);
    let cfg = JointConfig::default();
    let n = 160;
    let mut unvoiced = 0;
    for _ in 0..200 {
        let x = white(n, &mut r);
        if joint_estimate(&x, &Whitener::identity(), &cfg).unwrap().order() == 0 {
            unvoiced += 1;
        }
    }
    let mut voiced = 0;
    for _ in 0..200 {
        let (_, x) = random_harmonic(&mut r, n);
        let noise = white(n, &mut r);
        let g = (power(&x) / (10.0 * power(&noise))).sqrt();
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + g * b).collect();
        // white noise of known variance: whiten with the true model
        let w = Whitener::new(ArModel::white(g * g)).unwrap();
        if joint_estimate(&y, &w, &cfg).unwrap().order() >= 1 {
            voiced += 1;
        }
    }
    let pu = unvoiced as f64 / 200.0;
    let pv = voiced as f64 / 200.0;
    outcome(
        pu >= 0.90 && pv >= 0.95,
        format!("noise judged not voiced {:.1}%, voiced detected {:.1}%", 100.0 * pu, 100.0 * pv),
    )
}

// ---------------------------------------------------------------- 6

fn random_shape(r: &mut ChaCha8Rng, order: usize, bins: usize) -> Spectrum {
    let mut a: Vec<f64> = Vec::new();
    for _ in 0..order {
        let k: f64 = r.gen_range(-0.9..0.9);
        let prev = a.clone();
        for i in 0..prev.len() {
            a[i] = prev[i] + k * prev[prev.len() - 1 - i];
        }
        a.push(k);
    }
    ar_psd(&ArModel::new(a, 1.0).unwrap(), bins).unwrap()
}

fn combine(u: &Spectrum, c: &Spectrum, a: f64, b: f64) -> Spectrum {
    Spectrum::new(u.values().iter().zip(c.values()).map(|(x, y)| a * x + b * y).collect()).unwrap()
}

fn grid_oracle(phi: &Spectrum, u: &Spectrum, c: &Spectrum) -> f64 {
    let gain = |s: &Spectrum| phi.values().iter().zip(s.values()).map(|(p, q)| p / q).sum::<f64>() / phi.bins() as f64;
    let axis = |top: f64| {
        let mut v = vec![0.0];
        v.extend((0..200).map(|i| top * 10f64.powf(-5.0 + 5.5 * i as f64 / 199.0)));
        v
    };
    let mut best = f64::INFINITY;
    for a in axis(gain(u)) {
        for b in axis(gain(c)) {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            best = best.min(itakura_saito(phi, &combine(u, c, a, b)).unwrap());
        }
    }
    best
}

fn variance_oracle() -> Outcome {
    let mut r = rng(6);
    let bins = 256;
    let mut cases = Vec::new();
    for _ in 0..100 {
        let u = random_shape(&mut r, 14, bins);
        let c = random_shape(&mut r, 14, bins);
        let extra = random_shape(&mut r, 14, bins);
        let mut phi = combine(&u, &c, r.gen_range(0.0..3.0), r.gen_range(0.0..3.0));
        phi = combine(&phi, &extra, 1.0, r.gen_range(0.01..1.0));
        cases.push((phi, u, c));
    }
    let start = Instant::now();
    let estimates: Vec<f64> = cases
        .iter()
        .map(|(p, u, c)| estimate_variances(p, u, c).unwrap().distance)
        .collect();
    let el = start.elapsed();
    let mut worst = f64::NEG_INFINITY;
    let mut fails = 0;
    for ((p, u, c), d) in cases.iter().zip(&estimates) {
        let o = grid_oracle(p, u, c);
        let excess = (d - o) / o.max(1e-300);
        worst = worst.max(excess);
        if *d > o * 1.02 {
            fails += 1;
        }
    }
    outcome(
        fails == 0 && el < Duration::from_secs(10),
        format!("{fails}/100 above oracle + 2%, worst relative excess {:+.3}%, estimator time {:.3} s", 100.0 * worst, el.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 7

fn codebook_self_consistency() -> Outcome {
    let mut r = rng(7);
    let bins = 256;
    let us: Vec<Spectrum> = (0..16).map(|_| random_shape(&mut r, 14, bins)).collect();
    let cs: Vec<Spectrum> = (0..8).map(|_| random_shape(&mut r, 14, bins)).collect();
    let bank = ShapeBank::from_shapes(us.clone(), cs.clone()).unwrap();
    let mut correct = 0;
    for _ in 0..500 {
        let i = r.gen_range(0..16);
        let j = r.gen_range(0..8);
        let phi = combine(&us[i], &cs[j], r.gen_range(0.1..1.0), r.gen_range(0.1..1.0));
        let m = search_shapes(&phi, &bank).unwrap();
        if m.i_star == i && m.j_star == j {
            correct += 1;
        }
    }
    let rate = correct as f64 / 500.0;
    outcome(rate >= 0.98, format!("{correct}/500 recovered ({:.1}%)", 100.0 * rate))
}

// ---------------------------------------------------------------- 8

fn whitening() -> Outcome {
    // The gated figure uses the noise-reference estimator (an order-14 fit on
    // the noise itself). The quiet-frame estimator is reported alongside: on
    // stationary noise its lowest-energy selection biases the shape.
    let cases: [&[f64]; 4] = [&[-0.9], &[0.7], &[-1.2, 0.5], &[-1.6, 0.9]];
    let worst_rho = |x: &[f64], model: ArModel| {
        let rho = autocorrelation(&Whitener::new(model).unwrap().apply(x), 10);
        (1..=10).map(|lag| (rho[lag] / rho[0]).abs()).fold(0.0, f64::max)
    };
    let (mut worst, mut quiet): (f64, f64) = (0.0, 0.0);
    for (k, coeffs) in cases.iter().enumerate() {
        for seed in 0..3 {
            let x = ar_process(coeffs, 8000, &mut rng(80 + 10 * k as u64 + seed));
            worst = worst.max(worst_rho(&x, ar_fit(&x, 14).unwrap()));
            let y = SignalBuffer::new(x.clone(), RATE).unwrap();
            quiet = quiet.max(worst_rho(&x, initial_noise_estimate(&y, &NoiseEstimateConfig::default()).unwrap()));
        }
    }
    outcome(
        worst < 0.1,
        format!("max |rho(1..10)| {worst:.3} over 12 AR(1)/AR(2) runs; quiet-frame estimate {quiet:.3}, not gated"),
    )
}

// ---------------------------------------------------------------- 9

fn overlap_add_identity() -> Outcome {
    let mut r = rng(9);
    let x = white(4000, &mut r);
    let segs = [(0usize, 160usize), (160, 400), (560, 240), (800, 3200)];
    let filters: Vec<(usize, usize, Option<FilterMatrix>)> = segs
        .iter()
        .map(|&(s, l)| (s, l, Some(FilterMatrix { h: DMatrix::identity(40, 40) })))
        .collect();
    let td = filter_segments(&x, &filters, &OverlapConfig::default()).unwrap();
    let gains: Vec<GainSegment> = [(0usize, 120usize), (120, 200), (320, 280), (600, 3400)]
        .iter()
        .map(|&(start, len)| GainSegment { start, len, gains: vec![1.0; 512] })
        .collect();
    let fd = extract_unvoiced(&x, &gains, &StftConfig::default()).unwrap();
    let rel = |y: &[f64]| {
        (y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.iter().map(|v| v * v).sum::<f64>()).sqrt()
    };
    let (a, b) = (rel(&td), rel(&fd));
    outcome(a < 1e-6 && b < 1e-6, format!("time domain {a:.2e}, frequency domain {b:.2e}"))
}

// ---------------------------------------------------------------- 10

fn end_to_end_trend() -> Outcome {
    let start = Instant::now();
    let bank = small_bank(10, 4, 2, 256);
    let base = PipelineConfig {
        spectral_bins: 256,
        ..Default::default()
    };
    let fixed = PipelineConfig {
        fixed_segmentation_ms: Some(20.0),
        ..base.clone()
    };
    let mut wins = 0;
    let (mut snr_a, mut snr_f, mut lsd_a, mut lsd_f) = (0.0, 0.0, 0.0, 0.0);
    let mut per_file = Vec::new();
    for seed in 0..8u64 {
        let len = 4800 + 400 * (seed as usize % 3);
        let u = utterance(100 + seed, len);
        let clean = buffer(u.clean.clone());
        let noise = buffer(colored_noise(200 + seed, len));
        let y = mix_at_isnr(&clean, &noise, 10.0, 0, false).unwrap().mixture;
        let v = buffer(u.voiced.clone());
        let da = decompose(&y, &bank, &base, None).unwrap();
        let df = decompose(&y, &bank, &fixed, None).unwrap();
        let ea = buffer(da.voiced);
        let ef = buffer(df.voiced);
        let (sa, sf) = (seg_snr(&v, &ea, 20.0).unwrap(), seg_snr(&v, &ef, 20.0).unwrap());
        let (la, lf) = (lsd(&v, &ea, 20.0, 256).unwrap(), lsd(&v, &ef, 20.0, 256).unwrap());
        if sa > sf {
            wins += 1;
        }
        per_file.push(format!("{sa:.2}/{sf:.2}"));
        snr_a += sa / 8.0;
        snr_f += sf / 8.0;
        lsd_a += la / 8.0;
        lsd_f += lf / 8.0;
    }
    let el = start.elapsed();
    outcome(
        snr_a >= snr_f && lsd_a <= lsd_f && wins >= 6 && el < Duration::from_secs(120),
        format!(
            "segSNR adaptive {snr_a:.2} dB vs fixed {snr_f:.2} dB, LSD {lsd_a:.2} vs {lsd_f:.2} dB, adaptive wins {wins}/8 [{}], {:.1} s",
            per_file.join(" "),
            el.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 11

fn metric_sanity() -> Outcome {
    let mut r = rng(11);
    let x = buffer(white(1600, &mut r).iter().map(|v| 0.1 * v).collect());
    let x2 = buffer(x.samples().iter().map(|v| 2.0 * v).collect());
    let s = seg_snr(&x, &x, 20.0).unwrap();
    let l0 = lsd(&x, &x, 20.0, 256).unwrap();
    let l2 = lsd(&x, &x2, 20.0, 256).unwrap();
    let target = 10.0 * 4f64.log10();
    outcome(
        s == 35.0 && l0 == 0.0 && (l2 - target).abs() <= 0.01,
        format!("segSNR(x,x) {s} dB, LSD(x,x) {l0} dB, LSD(x,2x) {l2:.4} dB"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let pairs = random_pairs();
    let criteria: Vec<Criterion> = vec![
        ("dynamic program equals exhaustive search", Box::new(dp_vs_brute_force)),
        ("joint diagonalization invariants", Box::new(|| joint_diagonalization_invariants(&pairs))),
        ("variable-span Wiener identity", Box::new(|| vslf_identity(&pairs))),
        ("pitch accuracy", Box::new(pitch_accuracy)),
        ("voicing detection", Box::new(voicing_detection)),
        ("variance estimation vs grid oracle", Box::new(variance_oracle)),
        ("codebook self-consistency", Box::new(codebook_self_consistency)),
        ("whitening with the estimated model", Box::new(whitening)),
        ("overlap-add identity", Box::new(overlap_add_identity)),
        ("adaptive vs fixed segmentation", Box::new(end_to_end_trend)),
        ("metric sanity", Box::new(metric_sanity)),
    ];
    let only: Option<usize> = std::env::args().filter_map(|a| a.parse().ok()).next();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({}) [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
