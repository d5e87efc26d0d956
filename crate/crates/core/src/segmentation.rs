//! Segment costs and the dynamic-programming optimal segmenter.
//!
//! The signal is cut into `S` subsegments of `n_min` samples. A candidate
//! segment is a run of `b` consecutive subsegments with `b` in the allowed
//! range; its cost comes from a [`CostTable`]. Costs are additive over
//! disjoint segments, so the best tiling is found with a forward pass that
//! stores the best last-segment length for every prefix, then a backtrack
//! from the end of the signal.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{search_shapes, CodebookMatch, ShapeBank};
use crate::dsp::{ar_fit, ar_psd, ArModel, Spectrum, ENERGY_FLOOR};
use crate::error::{Error, Result};
use crate::harmonic::{fit_amplitudes, order_criterion, synthesize};
use crate::joint::{joint_estimate_prewhitened, JointConfig, SegmentFit};

/// Subsegment layout and the allowed segment sizes (in subsegments).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentGrid {
    pub n_min: usize,
    pub num_subsegments: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl SegmentGrid {
    pub fn new(n_min: usize, num_subsegments: usize, min_len: usize, max_len: usize) -> Result<Self> {
        if n_min == 0 || num_subsegments == 0 {
            return Err(Error::InvalidInput(
                "n_min and the number of subsegments must be >= 1".into(),
            ));
        }
        if min_len == 0 || min_len > max_len {
            return Err(Error::InvalidInput(format!(
                "allowed segment sizes {min_len}..={max_len} are empty"
            )));
        }
        Ok(Self {
            n_min,
            num_subsegments,
            min_len,
            max_len,
        })
    }

    /// Grid covering `total` samples; trailing samples that do not fill a
    /// subsegment are left out.
    pub fn for_signal(total: usize, n_min: usize, min_len: usize, max_len: usize) -> Result<Self> {
        Self::new(n_min, total / n_min.max(1), min_len, max_len)
    }

    pub fn allows(&self, b: usize) -> bool {
        (self.min_len..=self.max_len).contains(&b)
    }

    pub fn covered_samples(&self) -> usize {
        self.n_min * self.num_subsegments
    }
}

/// `cost(start, b)` for every start and every `b` up to `max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    num_subsegments: usize,
    max_len: usize,
    costs: Vec<f64>,
}

impl CostTable {
    /// All entries `+inf`.
    pub fn new(num_subsegments: usize, max_len: usize) -> Self {
        Self {
            num_subsegments,
            max_len,
            costs: vec![f64::INFINITY; num_subsegments * max_len],
        }
    }

    pub fn num_subsegments(&self) -> usize {
        self.num_subsegments
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn index(&self, start: usize, b: usize) -> Option<usize> {
        if b == 0 || b > self.max_len || start + b > self.num_subsegments {
            None
        } else {
            Some(start * self.max_len + b - 1)
        }
    }

    /// `+inf` for anything outside the table.
    pub fn get(&self, start: usize, b: usize) -> f64 {
        self.index(start, b).map_or(f64::INFINITY, |i| self.costs[i])
    }

    pub fn set(&mut self, start: usize, b: usize, cost: f64) -> Result<()> {
        if cost.is_nan() || cost == f64::NEG_INFINITY {
            return Err(Error::InvalidInput(format!(
                "cost table entries must be finite or +inf, got {cost}"
            )));
        }
        let i = self.index(start, b).ok_or_else(|| {
            Error::InvalidInput(format!("({start}, {b}) is outside the cost table"))
        })?;
        self.costs[i] = cost;
        Ok(())
    }

    /// Fill every allowed `(start, b)` entry with `cost_fn`, in parallel.
    pub fn build<F>(grid: &SegmentGrid, cost_fn: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Result<f64> + Sync,
    {
        let candidates: Vec<(usize, usize)> = (0..grid.num_subsegments)
            .flat_map(|s| {
                (grid.min_len..=grid.max_len)
                    .filter(move |b| s + b <= grid.num_subsegments)
                    .map(move |b| (s, b))
            })
            .collect();
        let values: Vec<f64> = candidates
            .par_iter()
            .map(|&(s, b)| cost_fn(s, b))
            .collect::<Result<_>>()?;
        let mut table = Self::new(grid.num_subsegments, grid.max_len);
        for (&(s, b), v) in candidates.iter().zip(values) {
            table.set(s, b, v)?;
        }
        Ok(table)
    }

    /// `start,b,cost` rows for every allowed entry.
    pub fn write_csv<W: Write>(&self, grid: &SegmentGrid, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["start", "b", "cost"])?;
        for s in 0..self.num_subsegments {
            for b in grid.min_len..=grid.max_len.min(self.max_len) {
                if s + b <= self.num_subsegments {
                    w.write_record([s.to_string(), b.to_string(), self.get(s, b).to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One segment of a tiling, in subsegment units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    /// `(first sample, sample count)` for subsegments of `n_min` samples.
    pub fn samples(&self, n_min: usize) -> (usize, usize) {
        (self.start * n_min, self.len * n_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub markers: Vec<Segment>,
    pub segment_costs: Vec<f64>,
    pub total_cost: f64,
    /// Cost-table reads made by the dynamic program.
    pub lookups: usize,
}

impl SegmentationResult {
    /// Wrap a fixed tiling (no search).
    pub fn from_markers(markers: Vec<Segment>, segment_costs: Vec<f64>) -> Self {
        let total_cost = segment_costs.iter().sum();
        Self {
            markers,
            segment_costs,
            total_cost,
            lookups: 0,
        }
    }
}

/// Consecutive segments of `b` subsegments; the last one takes whatever is left.
pub fn fixed_markers(num_subsegments: usize, b: usize) -> Vec<Segment> {
    let b = b.max(1);
    (0..num_subsegments)
        .step_by(b)
        .map(|start| Segment {
            start,
            len: b.min(num_subsegments - start),
        })
        .collect()
}

/// Minimum-cost tiling of `[0, S)`. Ties favour a longer final segment.
pub fn dp_segment(table: &CostTable, grid: &SegmentGrid) -> Result<SegmentationResult> {
    let s_total = grid.num_subsegments;
    if table.num_subsegments() != s_total {
        return Err(Error::InvalidInput(format!(
            "cost table covers {} subsegments, grid has {}",
            table.num_subsegments(),
            s_total
        )));
    }
    let max_b = grid.max_len.min(table.max_len());
    let mut best = vec![f64::INFINITY; s_total + 1];
    let mut b_opt = vec![0usize; s_total + 1];
    best[0] = 0.0;
    let mut lookups = 0;
    for s in 1..=s_total {
        for b in (grid.min_len..=max_b.min(s)).rev() {
            let prev = best[s - b];
            if prev == f64::INFINITY {
                continue;
            }
            lookups += 1;
            let c = prev + table.get(s - b, b);
            if c < best[s] {
                best[s] = c;
                b_opt[s] = b;
            }
        }
    }
    if best[s_total] == f64::INFINITY {
        return Err(Error::NoValidTiling {
            subsegments: s_total,
        });
    }
    let mut markers = Vec::new();
    let mut s = s_total;
    while s > 0 {
        let b = b_opt[s];
        markers.push(Segment { start: s - b, len: b });
        s -= b;
    }
    markers.reverse();
    let segment_costs: Vec<f64> = markers.iter().map(|m| table.get(m.start, m.len)).collect();
    Ok(SegmentationResult {
        markers,
        segment_costs,
        total_cost: best[s_total],
        lookups,
    })
}

/// Penalized MAP cost of a candidate segment on the whitened signal.
///
/// Voiced: `(N/2) ln(||y_W - Z a_W||^2 / N) + (3/2 + L) ln N`, with `a_W`
/// refitted on the whitened samples at the segment's pitch and order.
/// Not voiced: `(N/2) ln(||y_W||^2 / N)`.
pub fn map_cost_voiced(fit: &SegmentFit, whitened: &[f64]) -> Result<f64> {
    let n = whitened.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty segment".into()));
    }
    let order = fit.order();
    let rss = if order == 0 {
        whitened.iter().map(|v| v * v).sum::<f64>()
    } else {
        let est = fit_amplitudes(whitened, fit.harmonic.f0, order)?;
        let model = synthesize(&est, n);
        whitened
            .iter()
            .zip(&model)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    Ok(order_criterion(rss, n, order))
}

/// `(N/2) d_IS + (1/2) sum_k ln phi_x(w_k)` where `phi_x` sits on the
/// segment's own `N`-point grid.
pub fn loglik_cost_stochastic(phi_x_segment_grid: &Spectrum, distance: f64) -> f64 {
    let n = phi_x_segment_grid.bins() as f64;
    let log_sum: f64 = phi_x_segment_grid
        .values()
        .iter()
        .map(|v| v.max(ENERGY_FLOOR).ln())
        .sum();
    0.5 * n * distance + 0.5 * log_sum
}

/// Fit everything the voiced cost needs for one candidate.
pub fn voiced_candidate(
    y: &[f64],
    y_w: &[f64],
    cfg: &JointConfig,
) -> Result<(SegmentFit, f64)> {
    let fit = joint_estimate_prewhitened(y, y_w, cfg)?;
    let cost = map_cost_voiced(&fit, y_w)?;
    Ok((fit, cost))
}

/// MAP costs of every allowed candidate segment. Disallowed sizes stay `+inf`.
pub fn build_voiced_cost_table(
    y: &[f64],
    y_w: &[f64],
    grid: &SegmentGrid,
    cfg: &JointConfig,
) -> Result<CostTable> {
    check_coverage(y.len().min(y_w.len()), grid)?;
    CostTable::build(grid, |s, b| {
        let lo = s * grid.n_min;
        let hi = (s + b) * grid.n_min;
        voiced_candidate(&y[lo..hi], &y_w[lo..hi], cfg).map(|(_, c)| c)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticConfig {
    /// AR order of the residual spectrum fit.
    pub ar_order: usize,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self { ar_order: 28 }
    }
}

/// Codebook match and log-likelihood cost for one residual segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticFit {
    pub model: ArModel,
    pub matched: CodebookMatch,
    pub cost: f64,
}

pub fn stochastic_candidate(
    x: &[f64],
    bank: &ShapeBank,
    cfg: &StochasticConfig,
) -> Result<StochasticFit> {
    let order = cfg.ar_order.min(x.len().saturating_sub(1)).max(1);
    let model = ar_fit(x, order)?;
    let phi = ar_psd(&model, bank.bins())?;
    let matched = search_shapes(&phi, bank)?;
    let phi_n = ar_psd(&model, x.len().max(2))?;
    let cost = loglik_cost_stochastic(&phi_n, matched.distance);
    Ok(StochasticFit {
        model,
        matched,
        cost,
    })
}

/// Log-likelihood costs of every allowed candidate segment of the residual.
pub fn build_stochastic_cost_table(
    x: &[f64],
    grid: &SegmentGrid,
    bank: &ShapeBank,
    cfg: &StochasticConfig,
) -> Result<CostTable> {
    check_coverage(x.len(), grid)?;
    CostTable::build(grid, |s, b| {
        let lo = s * grid.n_min;
        let hi = (s + b) * grid.n_min;
        stochastic_candidate(&x[lo..hi], bank, cfg).map(|f| f.cost)
    })
}

fn check_coverage(len: usize, grid: &SegmentGrid) -> Result<()> {
    if len < grid.covered_samples() {
        return Err(Error::TooShort {
            needed: grid.covered_samples(),
            got: len,
        });
    }
    Ok(())
}
