use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use num_complex::Complex64;

use crate::dsp::{forward_fft, SignalBuffer, ENERGY_FLOOR};
use crate::error::Result;

use super::DecompositionReport;

const SPEC_FRAME: usize = 256;
const SPEC_HOP: usize = 128;

/// `(time_s, freq_hz, db)` rows: every frame times every one-sided bin.
pub fn spectrogram_rows(x: &SignalBuffer) -> Vec<(f64, f64, f64)> {
    let n = x.len();
    let frames = if n <= SPEC_FRAME { 1 } else { (n - SPEC_FRAME) / SPEC_HOP + 1 };
    let window: Vec<f64> = (0..SPEC_FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / SPEC_FRAME as f64).cos())
        .collect();
    let fft = forward_fft(SPEC_FRAME);
    let rate = x.sample_rate();
    let mut rows = Vec::with_capacity(frames * (SPEC_FRAME / 2 + 1));
    let mut buf = vec![Complex64::new(0.0, 0.0); SPEC_FRAME];
    for f in 0..frames {
        let s = f * SPEC_HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = x.samples().get(s + i).copied().unwrap_or(0.0);
            *b = Complex64::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        let t = (s as f64 + SPEC_FRAME as f64 / 2.0) / rate;
        for (k, b) in buf.iter().take(SPEC_FRAME / 2 + 1).enumerate() {
            let p = b.norm_sqr() / SPEC_FRAME as f64;
            rows.push((t, k as f64 * rate / SPEC_FRAME as f64, 10.0 * p.max(ENERGY_FLOOR).log10()));
        }
    }
    rows
}

/// Spectrogram CSVs for each named signal and a CSV of segment markers.
pub fn emit_plot_data(dir: &Path, report: &DecompositionReport, signals: &[(&str, &SignalBuffer)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, x) in signals {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(
            dir.join(format!("spectrogram_{name}.csv")),
        )?));
        w.write_record(["time_s", "freq_hz", "db"])?;
        for (t, f, db) in spectrogram_rows(x) {
            w.write_record([t.to_string(), f.to_string(), db.to_string()])?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("markers.csv"))?));
    w.write_record(["grid", "start", "len", "cost", "f0_hz", "order"])?;
    for s in &report.voiced_segments {
        w.write_record([
            "voiced".to_string(),
            s.start.to_string(),
            s.len.to_string(),
            s.cost.to_string(),
            s.f0_hz.to_string(),
            s.order.to_string(),
        ])?;
    }
    for s in &report.stochastic_segments {
        w.write_record([
            "stochastic".to_string(),
            s.start.to_string(),
            s.len.to_string(),
            s.cost.to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
