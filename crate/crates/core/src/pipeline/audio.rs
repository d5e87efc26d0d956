use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::dsp::SignalBuffer;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;
const MAX_OUT: f64 = 32767.0 / 32768.0;

/// Mono WAV as samples in `[-1, 1)`. Integer and float formats are accepted.
pub fn read_wav(path: &Path) -> Result<SignalBuffer> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "{} has {} channels; only mono input is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
    };
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no samples", path.display())));
    }
    SignalBuffer::new(samples, spec.sample_rate as f64)
}

/// Read and check the sample rate.
pub fn read_wav_at(path: &Path, sample_rate: f64) -> Result<SignalBuffer> {
    let s = read_wav(path)?;
    if (s.sample_rate() - sample_rate).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{} is sampled at {} Hz, expected {sample_rate} Hz",
            path.display(),
            s.sample_rate()
        )));
    }
    Ok(s)
}

/// Write 16-bit PCM. The signal is scaled down only if it would clip; the
/// applied scale (1 when untouched) is returned.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: f64) -> Result<f64> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > MAX_OUT { MAX_OUT / peak } else { 1.0 };
    let mut w = WavWriter::create(path, spec)?;
    for &v in samples {
        let q = (v * scale * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q)?;
    }
    w.finalize()?;
    Ok(scale)
}

/// Mixture of clean speech and noise at a given input SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: SignalBuffer,
    /// The scaled noise that was added.
    pub noise: Vec<f64>,
}

/// Add `noise[offset..]` scaled so that `10 log10(P_clean / P_noise)` over the
/// whole utterance equals `isnr_db`. With `wrap`, a noise file shorter than
/// the clean one is read cyclically; otherwise that is an error.
pub fn mix_at_isnr(
    clean: &SignalBuffer,
    noise: &SignalBuffer,
    isnr_db: f64,
    offset: usize,
    wrap: bool,
) -> Result<Mixture> {
    if (clean.sample_rate() - noise.sample_rate()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "clean is at {} Hz but noise is at {} Hz",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    if !isnr_db.is_finite() {
        return Err(Error::InvalidInput("iSNR must be finite".into()));
    }
    let n = clean.len();
    let src = noise.samples();
    if src.is_empty() {
        return Err(Error::InvalidInput("noise signal is empty".into()));
    }
    let slice: Vec<f64> = if wrap {
        (0..n).map(|i| src[(offset + i) % src.len()]).collect()
    } else {
        if offset + n > src.len() {
            return Err(Error::TooShort {
                needed: offset + n,
                got: src.len(),
            });
        }
        src[offset..offset + n].to_vec()
    };
    let p_clean = clean.power();
    let p_noise = slice.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    if !(p_clean > 0.0) {
        return Err(Error::InvalidInput("clean signal is silent".into()));
    }
    if !(p_noise > 0.0) {
        return Err(Error::InvalidInput("noise signal is silent".into()));
    }
    let g = (p_clean / (p_noise * 10f64.powf(isnr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = slice.iter().map(|v| v * g).collect();
    let mixed = clean.samples().iter().zip(&scaled).map(|(c, v)| c + v).collect();
    Ok(Mixture {
        mixture: clean.with_samples(mixed)?,
        noise: scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> SignalBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SignalBuffer::new((0..n).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect(), 8000.0).unwrap()
    }

    fn power(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn mixing_hits_target_snr() {
        let clean = noise(4000, 1);
        let n = noise(6000, 2);
        let m = mix_at_isnr(&clean, &n, 0.0, 100, false).unwrap();
        assert!((power(&m.noise) / clean.power() - 1.0).abs() < 1e-6);
        let m = mix_at_isnr(&clean, &n, 10.0, 0, false).unwrap();
        assert!((power(&m.noise) * 10.0 / clean.power() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mixing_is_homogeneous() {
        let clean = noise(2000, 3);
        let n = noise(3000, 4);
        let a = mix_at_isnr(&clean, &n, 5.0, 7, false).unwrap();
        let double = clean.with_samples(clean.samples().iter().map(|v| 2.0 * v).collect()).unwrap();
        let b = mix_at_isnr(&double, &n, 5.0, 7, false).unwrap();
        for (x, y) in a.mixture.samples().iter().zip(b.mixture.samples()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn short_or_silent_noise() {
        let clean = noise(2000, 5);
        let short = noise(500, 6);
        assert!(mix_at_isnr(&clean, &short, 0.0, 0, false).is_err());
        let wrapped = mix_at_isnr(&clean, &short, 0.0, 300, true).unwrap();
        assert_eq!(wrapped.mixture.len(), 2000);
        let silent = SignalBuffer::zeros(3000, 8000.0).unwrap();
        assert!(mix_at_isnr(&clean, &silent, 0.0, 0, false).is_err());
        assert!(mix_at_isnr(&silent, &clean, 0.0, 0, true).is_err());
    }

    #[test]
    fn wav_round_trip_and_clip_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..100).map(|i| (i as f64 / 100.0) - 0.5).collect();
        assert_eq!(write_wav(&p, &x, 8000.0).unwrap(), 1.0);
        let back = read_wav_at(&p, 8000.0).unwrap();
        for (a, b) in back.samples().iter().zip(&x) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
        assert!(read_wav_at(&p, 16000.0).is_err());
        let loud = vec![2.0, -1.0];
        let s = write_wav(&p, &loud, 8000.0).unwrap();
        assert!(s < 0.5);
        let back = read_wav(&p).unwrap();
        assert!(back.samples()[0] <= 1.0);
    }
}
