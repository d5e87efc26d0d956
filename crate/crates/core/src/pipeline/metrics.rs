use crate::dsp::{power_spectrum, SignalBuffer, ENERGY_FLOOR};
use crate::error::{Error, Result};

pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;
/// Frames whose reference mean square is below -60 dBFS are skipped.
pub const ACTIVITY_GATE: f64 = 1e-6;

fn frame_len(reference: &SignalBuffer, estimate: &SignalBuffer, frame_ms: f64) -> Result<usize> {
    if reference.len() != estimate.len() {
        return Err(Error::InvalidInput(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    let f = (frame_ms * 1e-3 * reference.sample_rate()).round() as usize;
    if f == 0 {
        return Err(Error::InvalidInput(format!("frame of {frame_ms} ms is empty")));
    }
    Ok(f)
}

/// Start indices of full, active frames.
fn active_frames(reference: &[f64], frame: usize) -> Vec<usize> {
    (0..reference.len() / frame)
        .map(|k| k * frame)
        .filter(|&s| {
            reference[s..s + frame].iter().map(|v| v * v).sum::<f64>() / frame as f64 >= ACTIVITY_GATE
        })
        .collect()
}

/// Mean of per-frame SNRs clamped to `[-10, 35]` dB over active frames.
pub fn seg_snr(reference: &SignalBuffer, estimate: &SignalBuffer, frame_ms: f64) -> Result<f64> {
    let f = frame_len(reference, estimate, frame_ms)?;
    let (r, e) = (reference.samples(), estimate.samples());
    let frames = active_frames(r, f);
    if frames.is_empty() {
        return Err(Error::UndefinedMetric("no active reference frames".into()));
    }
    let total: f64 = frames
        .iter()
        .map(|&s| {
            let sig: f64 = r[s..s + f].iter().map(|v| v * v).sum();
            let err: f64 = r[s..s + f]
                .iter()
                .zip(&e[s..s + f])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let db = if err > 0.0 {
                10.0 * (sig / err).log10()
            } else {
                f64::INFINITY
            };
            db.clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
        })
        .sum();
    Ok(total / frames.len() as f64)
}

/// Mean over active frames of the RMS (over one-sided bins) log-spectral
/// difference in dB.
pub fn lsd(reference: &SignalBuffer, estimate: &SignalBuffer, frame_ms: f64, bins: usize) -> Result<f64> {
    let f = frame_len(reference, estimate, frame_ms)?;
    let (r, e) = (reference.samples(), estimate.samples());
    let frames = active_frames(r, f);
    if frames.is_empty() {
        return Err(Error::UndefinedMetric("no active reference frames".into()));
    }
    let half = bins / 2 + 1;
    let mut total = 0.0;
    for &s in &frames {
        let pr = power_spectrum(&r[s..s + f], bins)?;
        let pe = power_spectrum(&e[s..s + f], bins)?;
        let ms: f64 = pr.values()[..half]
            .iter()
            .zip(&pe.values()[..half])
            .map(|(a, b)| {
                let d = 10.0 * (a.max(ENERGY_FLOOR) / b.max(ENERGY_FLOOR)).log10();
                d * d
            })
            .sum::<f64>()
            / half as f64;
        total += ms.sqrt();
    }
    Ok(total / frames.len() as f64)
}
