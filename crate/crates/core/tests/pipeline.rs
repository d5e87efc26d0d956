mod common;

use common::*;
use hybrid_decomp::codebook::{Codebook, CodebookKind};
use hybrid_decomp::dsp::SignalBuffer;
use hybrid_decomp::pipeline::{
    decompose, decompose_file, mix_at_isnr, seg_snr, voiced_stage, write_wav, PipelineConfig, SegmentationMode,
};
use hybrid_decomp::Error;

fn noisy(seed: u64, len: usize) -> (Utterance, SignalBuffer) {
    let u = utterance(seed, len);
    let clean = buffer(u.clean.clone());
    let noise = buffer(colored_noise(seed + 1000, len));
    let mix = mix_at_isnr(&clean, &noise, 10.0, 0, false).unwrap();
    (u, mix.mixture)
}

#[test]
fn lengths_consistency_and_determinism() {
    let (_, y) = noisy(1, 4410);
    let bank = small_bank(8, 4, 2, 256);
    let cfg = PipelineConfig {
        spectral_bins: 256,
        ..Default::default()
    };
    let a = decompose(&y, &bank, &cfg, None).unwrap();
    assert_eq!(a.voiced.len(), y.len());
    assert_eq!(a.unvoiced.len(), y.len());
    for i in 0..y.len() {
        assert!((a.voiced_model[i] + a.residual[i] - y.samples()[i]).abs() < 1e-12);
    }
    // markers tile the processed part
    let mut pos = 0;
    for s in &a.report.voiced_segments {
        assert_eq!(s.start, pos);
        pos += s.len;
    }
    assert_eq!(pos, a.report.processed_samples);
    assert_eq!(a.report.processed_samples, 4400);
    let mut pos = 0;
    for s in &a.report.stochastic_segments {
        assert_eq!(s.start, pos);
        pos += s.len;
    }
    assert_eq!(pos, 4400);
    assert!(a.report.voiced_dp_lookups <= 110 * 10);

    let b = decompose(&y, &bank, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
}

#[test]
fn fixed_baseline_uses_twenty_ms_segments() {
    let (_, y) = noisy(2, 4000);
    let bank = small_bank(8, 2, 2, 256);
    let cfg = PipelineConfig {
        spectral_bins: 256,
        fixed_segmentation_ms: Some(20.0),
        ..Default::default()
    };
    let d = decompose(&y, &bank, &cfg, None).unwrap();
    assert_eq!(d.report.mode, SegmentationMode::Fixed);
    assert!(d.report.voiced_segments.iter().all(|s| s.len == 160));
    assert!(d.report.stochastic_segments.iter().all(|s| s.len == 160));
    assert_eq!(d.report.voiced_dp_lookups, 0);
}

#[test]
fn noise_only_input_has_little_voiced_energy() {
    let x = colored_noise(5, 8000);
    let mut x = x;
    scale_to_power(&mut x, 1e-2);
    let y = buffer(x);
    let bank = small_bank(8, 4, 2, 256);
    let cfg = PipelineConfig {
        spectral_bins: 256,
        ..Default::default()
    };
    let d = decompose(&y, &bank, &cfg, None).unwrap();
    let v_db = 10.0 * power(&d.voiced).log10();
    let y_db = 10.0 * y.power().log10();
    assert!(v_db < y_db - 10.0, "voiced {v_db} dB vs input {y_db} dB");
    let u_db = 10.0 * power(&d.unvoiced).log10();
    assert!(u_db < y_db - 10.0, "unvoiced {u_db} dB vs input {y_db} dB");
}

#[test]
fn voiced_part_is_recovered() {
    let (u, y) = noisy(3, 6000);
    let cfg = PipelineConfig::default();
    let stage = voiced_stage(&y, &cfg, None).unwrap();
    let v = buffer(u.voiced.clone());
    let est = buffer(stage.voiced.clone());
    let snr = seg_snr(&v, &est, 20.0).unwrap();
    assert!(snr > 5.0, "{snr}");
}

#[test]
fn bad_inputs() {
    let bank = small_bank(4, 1, 1, 64);
    let cfg = PipelineConfig {
        spectral_bins: 64,
        ..Default::default()
    };
    let empty = SignalBuffer::new(vec![], RATE).unwrap();
    assert!(matches!(decompose(&empty, &bank, &cfg, None), Err(Error::TooShort { .. })));
    let other_rate = SignalBuffer::new(vec![0.1; 4000], 16000.0).unwrap();
    assert!(decompose(&other_rate, &bank, &cfg, None).is_err());
}

#[test]
fn file_round_trip_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, y) = noisy(4, 3200);
    let input = dir.path().join("in.wav");
    write_wav(&input, y.samples(), RATE).unwrap();

    let mut r = rng(7);
    let frames: Vec<Vec<f64>> = (0..20).map(|_| ar_process(&[0.5], 160, &mut r)).collect();
    let u = hybrid_decomp::codebook::train_codebook(&frames, 6, 2, CodebookKind::Unvoiced, 128, 0).unwrap();
    let c = hybrid_decomp::codebook::train_codebook(&frames, 6, 1, CodebookKind::Noise, 128, 0).unwrap();
    let pu = dir.path().join("u.cbk");
    let pc = dir.path().join("c.cbk");
    u.codebook.save(&pu).unwrap();
    c.codebook.save(&pc).unwrap();
    assert_eq!(Codebook::load(&pu).unwrap(), u.codebook);

    let cfg = PipelineConfig {
        spectral_bins: 128,
        codebook_u: Some(pu),
        codebook_c: Some(pc),
        ..Default::default()
    };
    let out = dir.path().join("out");
    let report = decompose_file(&input, &cfg, None, &out).unwrap();
    for f in ["v_hat.wav", "u_hat.wav", "report.json", "markers.csv", "spectrogram_y.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let v = hybrid_decomp::pipeline::read_wav(&out.join("v_hat.wav")).unwrap();
    assert_eq!(v.len(), 3200);
    assert!(report.output_scale.is_some());
    let rows = std::fs::read_to_string(out.join("spectrogram_y.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, ((3200 - 256) / 128 + 1) * 129);

    let missing = PipelineConfig::default();
    assert!(matches!(decompose_file(&input, &missing, None, &out), Err(Error::Config(_))));
}
