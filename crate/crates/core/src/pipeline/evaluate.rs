use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::ShapeBank;
use crate::dsp::SignalBuffer;
use crate::error::{Error, Result};

use super::{decompose, lsd, mix_at_isnr, seg_snr, voiced_stage, PipelineConfig};

const METRIC_FRAME_MS: f64 = 20.0;
const LSD_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedSignal {
    pub name: String,
    pub signal: SignalBuffer,
}

/// One metric row; a metric is empty when it is undefined for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub file: String,
    pub noise: String,
    pub isnr_db: f64,
    pub run: usize,
    pub method: String,
    pub component: String,
    pub seg_snr_db: Option<f64>,
    pub lsd_db: Option<f64>,
}

fn metric(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Adaptive against fixed 20 ms segmentation on every (file, noise, iSNR)
/// combination, `runs` times each with different noise offsets. References
/// are the voiced part extracted from the clean file and its complement.
pub fn evaluate(
    clean: &[NamedSignal],
    noise: &[NamedSignal],
    isnrs: &[f64],
    runs: usize,
    bank: &ShapeBank,
    cfg: &PipelineConfig,
) -> Result<Vec<EvalRow>> {
    let adaptive = PipelineConfig {
        fixed_segmentation_ms: None,
        ..cfg.clone()
    };
    let fixed = PipelineConfig {
        fixed_segmentation_ms: Some(cfg.fixed_segmentation_ms.unwrap_or(20.0)),
        ..cfg.clone()
    };
    fixed.validate()?;
    let refs: Vec<(SignalBuffer, SignalBuffer)> = clean
        .par_iter()
        .map(|c| {
            let stage = voiced_stage(&c.signal, &adaptive, None)?;
            let u: Vec<f64> = c.signal.samples().iter().zip(&stage.voiced).map(|(s, v)| s - v).collect();
            Ok((c.signal.with_samples(stage.voiced)?, c.signal.with_samples(u)?))
        })
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for fi in 0..clean.len() {
        for ni in 0..noise.len() {
            for &isnr in isnrs {
                for run in 0..runs {
                    jobs.push((fi, ni, isnr, run));
                }
            }
        }
    }
    let rows: Vec<Vec<EvalRow>> = jobs
        .par_iter()
        .map(|&(fi, ni, isnr, run)| {
            let n_len = noise[ni].signal.len();
            let offset = run * n_len / runs.max(1);
            let mix = mix_at_isnr(&clean[fi].signal, &noise[ni].signal, isnr, offset, true)?;
            let (v_ref, u_ref) = &refs[fi];
            let mut out = Vec::new();
            for (method, c) in [("adaptive", &adaptive), ("fixed", &fixed)] {
                let d = decompose(&mix.mixture, bank, c, None)?;
                for (component, reference, est) in [("voiced", v_ref, d.voiced), ("unvoiced", u_ref, d.unvoiced)] {
                    let est = reference.with_samples(est)?;
                    out.push(EvalRow {
                        file: clean[fi].name.clone(),
                        noise: noise[ni].name.clone(),
                        isnr_db: isnr,
                        run,
                        method: method.into(),
                        component: component.into(),
                        seg_snr_db: metric(seg_snr(reference, &est, METRIC_FRAME_MS))?,
                        lsd_db: metric(lsd(reference, &est, METRIC_FRAME_MS, LSD_BINS))?,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_results_csv<W: Write>(rows: &[EvalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
