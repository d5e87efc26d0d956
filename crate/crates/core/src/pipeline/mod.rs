//! Offline decomposition of a noisy recording into voiced and unvoiced
//! components, plus the I/O, mixing, metrics and evaluation around it.
//!
//! The driver runs six steps: global pre-whitening; voiced cost table and
//! optimal segmentation; per-segment statistics and time-domain Wiener
//! extraction of the voiced part; the modelled residual `y - Z a`;
//! stochastic cost table and segmentation of that residual; codebook
//! matching and frequency-domain Wiener extraction of the unvoiced part.

mod audio;
mod config;
mod evaluate;
mod metrics;
mod plot;

pub use audio::{mix_at_isnr, read_wav, read_wav_at, write_wav, Mixture};
pub use config::PipelineConfig;
pub use evaluate::{evaluate, write_results_csv, EvalRow, NamedSignal};
pub use metrics::{lsd, seg_snr, ACTIVITY_GATE, SEG_SNR_MAX_DB, SEG_SNR_MIN_DB};
pub use plot::{emit_plot_data, spectrogram_rows};

use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{training_frames, Codebook, CodebookKind, CodebookMatch, ShapeBank};
use crate::dsp::{ar_fit, ArModel, SignalBuffer, Spectrum};
use crate::error::{Error, Result};
use crate::filters::{extract_unvoiced, extract_voiced, wiener_unvoiced_gain, GainSegment, VoicedSegment};
use crate::harmonic::synthesize;
use crate::joint::SegmentFit;
use crate::segmentation::{
    build_stochastic_cost_table, build_voiced_cost_table, dp_segment, fixed_markers,
    stochastic_candidate, voiced_candidate, Segment, SegmentGrid, SegmentationResult, StochasticFit,
};
use crate::whitening::{initial_noise_estimate, prewhiten, Whitener};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentationMode {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WhitenerSource {
    QuietFrames,
    NoiseReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenerReport {
    pub source: WhitenerSource,
    pub model: ArModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoicedSegmentReport {
    /// Sample offset and length.
    pub start: usize,
    pub len: usize,
    pub f0_hz: f64,
    pub order: usize,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticSegmentReport {
    pub start: usize,
    pub len: usize,
    pub cost: f64,
    #[serde(rename = "match")]
    pub matched: CodebookMatch,
}

/// Deterministic summary of one decomposition (no wall-clock figures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub sample_rate: f64,
    pub samples: usize,
    /// Samples covered by the segmentation grids; the rest form a tail that
    /// is treated as not voiced and shares the last unvoiced filter.
    pub processed_samples: usize,
    pub mode: SegmentationMode,
    pub whitener: WhitenerReport,
    pub voiced_segments: Vec<VoicedSegmentReport>,
    pub stochastic_segments: Vec<StochasticSegmentReport>,
    pub voiced_total_cost: f64,
    pub stochastic_total_cost: f64,
    pub voiced_table_entries: usize,
    pub stochastic_table_entries: usize,
    pub voiced_dp_lookups: usize,
    pub stochastic_dp_lookups: usize,
    pub joint_iterations: usize,
    /// Scales applied when writing the WAVs to avoid clipping (1 = untouched).
    pub output_scale: Option<OutputScale>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub voiced: f64,
    pub unvoiced: f64,
}

/// Result of steps 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct VoicedStage {
    pub whitener: WhitenerReport,
    pub grid: SegmentGrid,
    pub segmentation: SegmentationResult,
    pub fits: Vec<SegmentFit>,
    /// Wiener estimate of the voiced component.
    pub voiced: Vec<f64>,
    /// `Z a` on every segment (zero on the tail).
    pub voiced_model: Vec<f64>,
    /// `y - Z a`.
    pub residual: Vec<f64>,
    pub table_entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub voiced: Vec<f64>,
    pub unvoiced: Vec<f64>,
    pub voiced_model: Vec<f64>,
    pub residual: Vec<f64>,
    pub report: DecompositionReport,
}

fn count_entries(grid: &SegmentGrid) -> usize {
    (0..grid.num_subsegments)
        .map(|s| {
            (grid.min_len..=grid.max_len)
                .filter(|b| s + b <= grid.num_subsegments)
                .count()
        })
        .sum()
}

/// Fixed tiling with a short remainder folded into the segment before it.
fn fixed_tiling(grid: &SegmentGrid, b: usize) -> Vec<Segment> {
    let mut m = fixed_markers(grid.num_subsegments, b);
    if m.len() > 1 && m.last().is_some_and(|s| s.len < b) {
        let last = m.pop().expect("non-empty");
        m.last_mut().expect("non-empty").len += last.len;
    }
    m
}

fn whitener_for(y: &SignalBuffer, cfg: &PipelineConfig, noise_ref: Option<&SignalBuffer>) -> Result<WhitenerReport> {
    match noise_ref {
        Some(r) => {
            if (r.sample_rate() - y.sample_rate()).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "noise reference is at {} Hz, input at {} Hz",
                    r.sample_rate(),
                    y.sample_rate()
                )));
            }
            Ok(WhitenerReport {
                source: WhitenerSource::NoiseReference,
                model: ar_fit(r.samples(), cfg.whitener_order)?,
            })
        }
        None => Ok(WhitenerReport {
            source: WhitenerSource::QuietFrames,
            model: initial_noise_estimate(y, &cfg.noise_estimate())?,
        }),
    }
}

fn check_input(y: &SignalBuffer, cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    if (y.sample_rate() - cfg.sample_rate).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "input is sampled at {} Hz, config expects {} Hz",
            y.sample_rate(),
            cfg.sample_rate
        )));
    }
    let (min_b, _) = cfg.voiced_sizes()?;
    let needed = min_b * cfg.n_min()?;
    if y.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: y.len(),
        });
    }
    Ok(())
}

/// Steps 1 to 4: whitening, voiced segmentation, voiced extraction and the
/// modelled residual.
pub fn voiced_stage(y: &SignalBuffer, cfg: &PipelineConfig, noise_ref: Option<&SignalBuffer>) -> Result<VoicedStage> {
    check_input(y, cfg)?;
    let whitener = whitener_for(y, cfg, noise_ref)?;
    let y_w = prewhiten(y, &Whitener::new(whitener.model.clone())?);
    let joint = cfg.joint();
    let grid = cfg.voiced_grid(y.len())?;
    let (ys, yws) = (y.samples(), y_w.samples());
    let n_min = grid.n_min;

    let (markers, table_costs, lookups, table_entries) = match cfg.fixed_size()? {
        None => {
            let table = build_voiced_cost_table(ys, yws, &grid, &joint)?;
            let seg = dp_segment(&table, &grid)?;
            (seg.markers, Some(seg.segment_costs), seg.lookups, count_entries(&grid))
        }
        Some(b) => (fixed_tiling(&grid, b), None, 0, 0),
    };
    let fitted: Vec<(SegmentFit, f64)> = markers
        .par_iter()
        .map(|m| {
            let (lo, len) = m.samples(n_min);
            voiced_candidate(&ys[lo..lo + len], &yws[lo..lo + len], &joint)
        })
        .collect::<Result<_>>()?;
    let costs = table_costs.unwrap_or_else(|| fitted.iter().map(|f| f.1).collect());
    let mut segmentation = SegmentationResult::from_markers(markers, costs);
    segmentation.lookups = lookups;
    let fits: Vec<SegmentFit> = fitted.into_iter().map(|f| f.0).collect();

    let segments: Vec<VoicedSegment> = segmentation
        .markers
        .iter()
        .zip(&fits)
        .map(|(m, f)| {
            let (start, len) = m.samples(n_min);
            VoicedSegment {
                start,
                len,
                harmonic: f.harmonic.clone(),
                residual_model: f.residual_model.clone(),
            }
        })
        .collect();
    let voiced = extract_voiced(ys, &segments, &cfg.overlap())?;

    let mut voiced_model = vec![0.0; ys.len()];
    for s in &segments {
        let v = synthesize(&s.harmonic, s.len);
        voiced_model[s.start..s.start + s.len].copy_from_slice(&v);
    }
    let residual = ys.iter().zip(&voiced_model).map(|(a, b)| a - b).collect();
    Ok(VoicedStage {
        whitener,
        grid,
        segmentation,
        fits,
        voiced,
        voiced_model,
        residual,
        table_entries,
    })
}

/// Codebook shapes sampled on the configured grid.
pub fn shape_bank(cb_u: &Codebook, cb_c: &Codebook, cfg: &PipelineConfig) -> Result<ShapeBank> {
    if cb_u.kind != CodebookKind::Unvoiced || cb_c.kind != CodebookKind::Noise {
        warn!("codebook kinds are {:?}/{:?}, expected unvoiced/noise", cb_u.kind, cb_c.kind);
    }
    ShapeBank::new(cb_u, cb_c, cfg.spectral_bins)
}

/// All six steps.
pub fn decompose(
    y: &SignalBuffer,
    bank: &ShapeBank,
    cfg: &PipelineConfig,
    noise_ref: Option<&SignalBuffer>,
) -> Result<Decomposition> {
    let stage = voiced_stage(y, cfg, noise_ref)?;
    let x = &stage.residual;
    let sgrid = cfg.stochastic_grid(x.len())?;
    let n_min = sgrid.n_min;
    let scfg = cfg.stochastic();

    let (markers, table_costs, lookups, s_entries) = match cfg.fixed_size()? {
        None => {
            let table = build_stochastic_cost_table(x, &sgrid, bank, &scfg)?;
            let seg = dp_segment(&table, &sgrid)?;
            (seg.markers, Some(seg.segment_costs), seg.lookups, count_entries(&sgrid))
        }
        Some(b) => (fixed_tiling(&sgrid, b), None, 0, 0),
    };
    let fits: Vec<StochasticFit> = markers
        .par_iter()
        .map(|m| {
            let (lo, len) = m.samples(n_min);
            stochastic_candidate(&x[lo..lo + len], bank, &scfg)
        })
        .collect::<Result<_>>()?;
    let s_costs = table_costs.unwrap_or_else(|| fits.iter().map(|f| f.cost).collect());
    let mut s_seg = SegmentationResult::from_markers(markers, s_costs);
    s_seg.lookups = lookups;

    let mut gain_segments = Vec::with_capacity(fits.len());
    for (m, f) in s_seg.markers.iter().zip(&fits) {
        let (start, len) = m.samples(n_min);
        let shape_u = Spectrum::new(bank.unvoiced_shape(f.matched.i_star).to_vec())?;
        let shape_c = Spectrum::new(bank.noise_shape(f.matched.j_star).to_vec())?;
        let gains = wiener_unvoiced_gain(f.matched.sigma_u2, &shape_u, f.matched.sigma_c2, &shape_c)?;
        gain_segments.push(GainSegment { start, len, gains });
    }
    let processed = sgrid.covered_samples();
    if let Some(last) = gain_segments.last_mut() {
        last.len += x.len() - processed;
    }
    let unvoiced = extract_unvoiced(x, &gain_segments, &cfg.stft())?;

    let voiced_segments = stage
        .segmentation
        .markers
        .iter()
        .zip(&stage.fits)
        .zip(&stage.segmentation.segment_costs)
        .map(|((m, f), &cost)| {
            let (start, len) = m.samples(stage.grid.n_min);
            VoicedSegmentReport {
                start,
                len,
                f0_hz: f.harmonic.f0 * cfg.sample_rate,
                order: f.order(),
                cost,
                iterations: f.iterations_used,
                converged: f.converged,
            }
        })
        .collect();
    let stochastic_segments = s_seg
        .markers
        .iter()
        .zip(&fits)
        .zip(&s_seg.segment_costs)
        .map(|((m, f), &cost)| {
            let (start, len) = m.samples(n_min);
            StochasticSegmentReport {
                start,
                len,
                cost,
                matched: f.matched.clone(),
            }
        })
        .collect();
    let report = DecompositionReport {
        sample_rate: cfg.sample_rate,
        samples: y.len(),
        processed_samples: stage.grid.covered_samples(),
        mode: if cfg.fixed_segmentation_ms.is_some() {
            SegmentationMode::Fixed
        } else {
            SegmentationMode::Adaptive
        },
        whitener: stage.whitener.clone(),
        voiced_segments,
        stochastic_segments,
        voiced_total_cost: stage.segmentation.total_cost,
        stochastic_total_cost: s_seg.total_cost,
        voiced_table_entries: stage.table_entries,
        stochastic_table_entries: s_entries,
        voiced_dp_lookups: stage.segmentation.lookups,
        stochastic_dp_lookups: s_seg.lookups,
        joint_iterations: stage.fits.iter().map(|f| f.iterations_used).sum(),
        output_scale: None,
    };
    Ok(Decomposition {
        voiced: stage.voiced,
        unvoiced,
        voiced_model: stage.voiced_model,
        residual: stage.residual,
        report,
    })
}

/// Load the codebooks named in the config.
pub fn load_codebooks(cfg: &PipelineConfig) -> Result<(Codebook, Codebook)> {
    let u = cfg
        .codebook_u
        .as_ref()
        .ok_or_else(|| Error::Config("no unvoiced codebook given".into()))?;
    let c = cfg
        .codebook_c
        .as_ref()
        .ok_or_else(|| Error::Config("no noise codebook given".into()))?;
    Ok((Codebook::load(u)?, Codebook::load(c)?))
}

/// Decompose a WAV file and write `v_hat.wav`, `u_hat.wav`, `report.json`
/// and the plot CSVs into `out_dir`.
pub fn decompose_file(
    input: &Path,
    cfg: &PipelineConfig,
    noise_ref: Option<&Path>,
    out_dir: &Path,
) -> Result<DecompositionReport> {
    let (cb_u, cb_c) = load_codebooks(cfg)?;
    let bank = shape_bank(&cb_u, &cb_c, cfg)?;
    let y = read_wav_at(input, cfg.sample_rate)?;
    let noise = noise_ref.map(|p| read_wav_at(p, cfg.sample_rate)).transpose()?;
    let mut d = decompose(&y, &bank, cfg, noise.as_ref())?;
    std::fs::create_dir_all(out_dir)?;
    let sv = write_wav(&out_dir.join("v_hat.wav"), &d.voiced, cfg.sample_rate)?;
    let su = write_wav(&out_dir.join("u_hat.wav"), &d.unvoiced, cfg.sample_rate)?;
    if sv < 1.0 || su < 1.0 {
        warn!("outputs were scaled to avoid clipping (voiced {sv}, unvoiced {su})");
    }
    d.report.output_scale = Some(OutputScale {
        voiced: sv,
        unvoiced: su,
    });
    let v = y.with_samples(d.voiced.clone())?;
    let u = y.with_samples(d.unvoiced.clone())?;
    emit_plot_data(out_dir, &d.report, &[("y", &y), ("v_hat", &v), ("u_hat", &u)])?;
    let f = std::fs::File::create(out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &d.report)?;
    info!(
        "{}: {} voiced and {} stochastic segments",
        input.display(),
        d.report.voiced_segments.len(),
        d.report.stochastic_segments.len()
    );
    Ok(d.report)
}

/// Training frames for a codebook: the recordings themselves for noise, the
/// difference between each clean recording and its extracted voiced part for
/// unvoiced speech.
pub fn codebook_training_frames(
    signals: &[SignalBuffer],
    kind: CodebookKind,
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<f64>>> {
    let frame = (cfg.noise_frame_ms * 1e-3 * cfg.sample_rate).round() as usize;
    let per_signal: Vec<Vec<Vec<f64>>> = signals
        .par_iter()
        .map(|s| match kind {
            CodebookKind::Noise => Ok(training_frames(s.samples(), frame)),
            CodebookKind::Unvoiced => {
                let stage = voiced_stage(s, cfg, None)?;
                let u: Vec<f64> = s.samples().iter().zip(&stage.voiced).map(|(a, b)| a - b).collect();
                Ok(training_frames(&u, frame))
            }
        })
        .collect::<Result<_>>()?;
    Ok(per_signal.into_iter().flatten().collect())
}
