//! Codebooks of gain-normalized AR spectral shapes for unvoiced speech and
//! noise, LBG training in the LSF domain, excitation-variance estimation and
//! the exhaustive Itakura-Saito search over shape pairs.

pub mod lsf;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{ar_fit, ar_psd, ArModel, Spectrum, ENERGY_FLOOR};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HCBK";
const FORMAT_VERSION: u32 = 1;
const MAX_NEWTON_ITERS: usize = 100;
const LBG_REL_TOL: f64 = 1e-4;
const MAX_LLOYD_ITERS: usize = 200;
const SPLIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    Unvoiced,
    Noise,
}

impl CodebookKind {
    fn tag(self) -> u8 {
        match self {
            CodebookKind::Unvoiced => 0,
            CodebookKind::Noise => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(CodebookKind::Unvoiced),
            1 => Ok(CodebookKind::Noise),
            t => Err(Error::CodebookFormat(format!("unknown kind tag {t}"))),
        }
    }
}

impl std::str::FromStr for CodebookKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unvoiced" => Ok(CodebookKind::Unvoiced),
            "noise" => Ok(CodebookKind::Noise),
            other => Err(Error::InvalidInput(format!(
                "codebook kind must be 'unvoiced' or 'noise', got '{other}'"
            ))),
        }
    }
}

/// Unit-excitation AR shapes of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub kind: CodebookKind,
    pub order: usize,
    /// Spectral grid the shapes are meant to be compared on.
    pub grid: usize,
    /// Coefficient rows `a_1..a_P`.
    pub entries: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(kind: CodebookKind, order: usize, grid: usize, entries: Vec<Vec<f64>>) -> Result<Self> {
        let cb = Self {
            kind,
            order,
            grid,
            entries,
        };
        cb.validate()?;
        Ok(cb)
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::CodebookFormat("codebook has no entries".into()));
        }
        if self.grid < 2 {
            return Err(Error::CodebookFormat(format!("grid of {} bins", self.grid)));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.len() != self.order {
                return Err(Error::CodebookFormat(format!(
                    "entry {i} has {} coefficients, expected {}",
                    e.len(),
                    self.order
                )));
            }
            if !self.model(i).is_stable() {
                return Err(Error::CodebookFormat(format!("entry {i} is unstable")));
            }
        }
        Ok(())
    }

    /// Entry `i` as a unit-variance AR model.
    pub fn model(&self, i: usize) -> ArModel {
        ArModel {
            coeffs: self.entries[i].clone(),
            excitation_variance: 1.0,
        }
    }

    /// Shapes `1 / |A_i|^2` on a `bins`-point grid.
    pub fn shapes(&self, bins: usize) -> Result<Vec<Spectrum>> {
        (0..self.size()).map(|i| ar_psd(&self.model(i), bins)).collect()
    }

    /// Binary file plus a `.json` sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.tag()])?;
        for v in [self.order, self.size(), self.grid] {
            let v = u32::try_from(v)
                .map_err(|_| Error::CodebookFormat(format!("{v} does not fit in u32")))?;
            w.write_all(&v.to_le_bytes())?;
        }
        for e in &self.entries {
            for c in e {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        w.flush()?;
        let sidecar = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(BufWriter::new(sidecar), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::CodebookFormat(format!(
                "{} is not a codebook file",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::CodebookFormat(format!(
                "unsupported version {version}"
            )));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let kind = CodebookKind::from_tag(tag[0])?;
        let order = read_u32(&mut r)? as usize;
        let size = read_u32(&mut r)? as usize;
        let grid = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(size);
        let mut buf = [0u8; 8];
        for _ in 0..size {
            let mut row = Vec::with_capacity(order);
            for _ in 0..order {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::CodebookFormat("truncated entry data".into()))?;
                row.push(f64::from_le_bytes(buf));
            }
            entries.push(row);
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::CodebookFormat("trailing bytes after entries".into()));
        }
        Self::new(kind, order, grid, entries)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::CodebookFormat("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Frames of `frame` samples with 50% overlap.
pub fn training_frames(signal: &[f64], frame: usize) -> Vec<Vec<f64>> {
    if frame == 0 || signal.len() < frame {
        return Vec::new();
    }
    let hop = (frame / 2).max(1);
    (0..=(signal.len() - frame) / hop)
        .map(|i| signal[i * hop..i * hop + frame].to_vec())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub codebook: Codebook,
    /// Mean squared LSF distance after every Lloyd pass, across all splits.
    pub distortion_history: Vec<f64>,
}

/// LBG training on AR fits of the given frames.
///
/// Frames with (numerically) zero energy are skipped. Clusters live in the
/// LSF domain with Euclidean distance; each split keeps the parent centroid
/// and adds a seeded perturbation of it, so a split never raises distortion.
pub fn train_codebook(
    frames: &[Vec<f64>],
    order: usize,
    size: usize,
    kind: CodebookKind,
    grid: usize,
    seed: u64,
) -> Result<TrainingOutcome> {
    if size == 0 || order == 0 {
        return Err(Error::InvalidInput("codebook size and order must be >= 1".into()));
    }
    let mut vectors = Vec::new();
    for f in frames {
        if f.len() <= order {
            return Err(Error::InsufficientData(format!(
                "frame of {} samples is too short for order {order}",
                f.len()
            )));
        }
        if f.iter().map(|v| v * v).sum::<f64>() / (f.len() as f64) < ENERGY_FLOOR {
            continue;
        }
        let model = ar_fit(f, order)?;
        vectors.push(lsf::poly_to_lsf(&model.coeffs)?);
    }
    if vectors.len() < size {
        return Err(Error::InsufficientData(format!(
            "{} usable frames for {size} entries",
            vectors.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![mean_vector(&vectors, order)];
    let mut history = Vec::new();
    let mut assign = vec![0usize; vectors.len()];
    history.push(assign_all(&vectors, &centroids, &mut assign));

    while centroids.len() < size {
        let per_cluster = cluster_distortion(&vectors, &centroids, &assign);
        let mut order_idx: Vec<usize> = (0..centroids.len()).collect();
        order_idx.sort_by(|&a, &b| per_cluster[b].total_cmp(&per_cluster[a]).then(a.cmp(&b)));
        let n_split = (size - centroids.len()).min(centroids.len());
        for &c in order_idx.iter().take(n_split) {
            let child: Vec<f64> = centroids[c]
                .iter()
                .map(|v| v + SPLIT_SCALE * rng.gen_range(-1.0..1.0))
                .collect();
            centroids.push(child);
        }
        lloyd(&vectors, &mut centroids, &mut assign, &mut history);
    }

    let entries = centroids
        .into_iter()
        .map(|mut c| {
            lsf::enforce_separation(&mut c);
            lsf::lsf_to_poly(&c)
        })
        .collect();
    Ok(TrainingOutcome {
        codebook: Codebook::new(kind, order, grid, entries)?,
        distortion_history: history,
    })
}

fn mean_vector(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vectors {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= vectors.len() as f64);
    m
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest-centroid assignment (lowest index on ties); returns mean distortion.
fn assign_all(vectors: &[Vec<f64>], centroids: &[Vec<f64>], assign: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (v, a) in vectors.iter().zip(assign.iter_mut()) {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, sq_dist(v, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        *a = best;
        total += d;
    }
    total / vectors.len() as f64
}

fn cluster_distortion(vectors: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> Vec<f64> {
    let mut d = vec![0.0; centroids.len()];
    for (v, &a) in vectors.iter().zip(assign) {
        d[a] += sq_dist(v, &centroids[a]);
    }
    d
}

fn lloyd(
    vectors: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assign: &mut [usize],
    history: &mut Vec<f64>,
) {
    let dim = centroids[0].len();
    let mut prev = history.last().copied().unwrap_or(f64::INFINITY);
    for _ in 0..MAX_LLOYD_ITERS {
        assign_all(vectors, centroids, assign);
        // refill empty clusters with the point farthest from its centroid
        loop {
            let mut counts = vec![0usize; centroids.len()];
            assign.iter().for_each(|&a| counts[a] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..vectors.len())
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&i, &j| {
                    sq_dist(&vectors[i], &centroids[assign[i]])
                        .total_cmp(&sq_dist(&vectors[j], &centroids[assign[j]]))
                        .then(j.cmp(&i))
                });
            let Some(far) = far else { break };
            centroids[empty] = vectors[far].clone();
            assign[far] = empty;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (v, &a) in vectors.iter().zip(assign.iter()) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
        let after: f64 = cluster_distortion(vectors, centroids, assign).iter().sum::<f64>()
            / vectors.len() as f64;
        history.push(after);
        if prev.is_finite() && (prev - after) <= LBG_REL_TOL * prev {
            break;
        }
        if after == 0.0 {
            break;
        }
        prev = after;
    }
}

/// Excitation variances of one shape pair and the resulting IS distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma_u2: f64,
    pub sigma_c2: f64,
    pub distance: f64,
    /// Newton iteration failed and a grid search supplied the answer.
    pub fallback: bool,
}

/// `(sigma_u^2, sigma_c^2) >= 0` minimizing `d_IS(phi, s_u shape_u + s_c shape_c)`.
pub fn estimate_variances(phi: &Spectrum, shape_u: &Spectrum, shape_c: &Spectrum) -> Result<VarianceEstimate> {
    if phi.bins() != shape_u.bins() {
        return Err(Error::GridMismatch(phi.bins(), shape_u.bins()));
    }
    if phi.bins() != shape_c.bins() {
        return Err(Error::GridMismatch(phi.bins(), shape_c.bins()));
    }
    for s in [shape_u, shape_c] {
        if let Some(i) = s.values().iter().position(|&v| v <= 0.0) {
            return Err(Error::ZeroModelBin(i));
        }
    }
    Ok(variances_unchecked(phi.values(), shape_u.values(), shape_c.values()))
}

fn is_of(phi: &[f64], u: &[f64], c: &[f64], a: f64, b: f64) -> f64 {
    let mut sum = 0.0;
    for ((&p, &su), &sc) in phi.iter().zip(u).zip(c) {
        let m = a * su + b * sc;
        if m <= 0.0 {
            return f64::INFINITY;
        }
        let q = p.max(f64::MIN_POSITIVE) / m;
        sum += q - q.ln() - 1.0;
    }
    (sum / phi.len() as f64).max(0.0)
}

/// Closed-form single-shape gain `mean(phi / shape)`.
fn single_gain(phi: &[f64], shape: &[f64]) -> f64 {
    phi.iter().zip(shape).map(|(p, s)| p / s).sum::<f64>() / phi.len() as f64
}

fn variances_unchecked(phi: &[f64], u: &[f64], c: &[f64]) -> VarianceEstimate {
    let a0 = single_gain(phi, u);
    let b0 = single_gain(phi, c);
    if !(a0 > 0.0 || b0 > 0.0) {
        return VarianceEstimate {
            sigma_u2: 0.0,
            sigma_c2: 0.0,
            distance: 0.0,
            fallback: false,
        };
    }
    let mut best = (a0, 0.0, is_of(phi, u, c, a0, 0.0));
    let cand = (0.0, b0, is_of(phi, u, c, 0.0, b0));
    if cand.2 < best.2 {
        best = cand;
    }
    let start = profile_scan(phi, u, c);
    if start.2 < best.2 {
        best = start;
    }
    let mut fallback = false;
    match newton(phi, u, c, start.0, start.1) {
        Some(x) => {
            if x.2 < best.2 {
                best = x;
            }
        }
        None => {
            let g = grid_search(phi, u, c, a0, b0);
            if g.2 < best.2 {
                best = g;
            }
            fallback = true;
        }
    }
    VarianceEstimate {
        sigma_u2: best.0,
        sigma_c2: best.1,
        distance: best.2,
        fallback,
    }
}

/// Distance along the mixing direction `theta = 1 / (1 + e^-t)` with the
/// optimal overall scale, which is closed form:
/// `min_s d_IS(phi, s q) = ln mean(phi / q) - mean ln(phi / q)`.
fn profile_at(phi: &[f64], u: &[f64], c: &[f64], t: f64) -> (f64, f64, f64) {
    let theta = 1.0 / (1.0 + (-t).exp());
    let (mut ratio, mut log_ratio) = (0.0, 0.0);
    for ((&p, &su), &sc) in phi.iter().zip(u).zip(c) {
        let r = p.max(f64::MIN_POSITIVE) / (theta * su + (1.0 - theta) * sc);
        ratio += r;
        log_ratio += r.ln();
    }
    let k = phi.len() as f64;
    let s = ratio / k;
    let d = (s.ln() - log_ratio / k).max(0.0);
    (s * theta, s * (1.0 - theta), d)
}

/// The distance is not convex in the two variances, so Newton is started
/// from the best point of a scan over the mixing direction, refined by
/// golden section.
fn profile_scan(phi: &[f64], u: &[f64], c: &[f64]) -> (f64, f64, f64) {
    const T_MAX: f64 = 16.0;
    const T_STEP: f64 = 1.0;
    let steps = (2.0 * T_MAX / T_STEP) as usize;
    let mut best_t = -T_MAX;
    let mut best = profile_at(phi, u, c, best_t);
    for i in 1..=steps {
        let t = -T_MAX + i as f64 * T_STEP;
        let p = profile_at(phi, u, c, t);
        if p.2 < best.2 {
            best = p;
            best_t = t;
        }
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (best_t - T_STEP, best_t + T_STEP);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut p1 = profile_at(phi, u, c, x1);
    let mut p2 = profile_at(phi, u, c, x2);
    while hi - lo > 1e-3 {
        if p1.2 <= p2.2 {
            hi = x2;
            x2 = x1;
            p2 = p1;
            x1 = hi - INV_PHI * (hi - lo);
            p1 = profile_at(phi, u, c, x1);
        } else {
            lo = x1;
            x1 = x2;
            p1 = p2;
            x2 = lo + INV_PHI * (hi - lo);
            p2 = profile_at(phi, u, c, x2);
        }
    }
    for p in [p1, p2] {
        if p.2 < best.2 {
            best = p;
        }
    }
    best
}

/// Projected damped Newton on the two variances; `None` if it does not
/// settle within the iteration budget.
fn newton(phi: &[f64], u: &[f64], c: &[f64], mut a: f64, mut b: f64) -> Option<(f64, f64, f64)> {
    let k = phi.len() as f64;
    let mut d = is_of(phi, u, c, a, b);
    for _ in 0..MAX_NEWTON_ITERS {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((&p, &su), &sc) in phi.iter().zip(u).zip(c) {
            let m = a * su + b * sc;
            let r = p / m;
            let g = (1.0 - r) / m;
            let h = (2.0 * r - 1.0) / (m * m);
            ga += su * g;
            gb += sc * g;
            haa += su * su * h;
            hab += su * sc * h;
            hbb += sc * sc * h;
        }
        let (ga, gb, haa, hab, hbb) = (ga / k, gb / k, haa / k, hab / k, hbb / k);
        // variables pinned at zero with an outward gradient stay fixed
        let free_a = !(a == 0.0 && ga > 0.0);
        let free_b = !(b == 0.0 && gb > 0.0);
        let (da, db) = match (free_a, free_b) {
            (true, true) => {
                let det = haa * hbb - hab * hab;
                if haa > 0.0 && det > 0.0 {
                    (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
                } else {
                    (coordinate_step(a, ga, haa), coordinate_step(b, gb, hbb))
                }
            }
            (true, false) => (coordinate_step(a, ga, haa), 0.0),
            (false, true) => (0.0, coordinate_step(b, gb, hbb)),
            (false, false) => return Some((a, b, d)),
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let na = (a + t * da).max(0.0);
            let nb = (b + t * db).max(0.0);
            let nd = is_of(phi, u, c, na, nb);
            if nd <= d {
                accepted = Some((na, nb, nd));
                break;
            }
            t *= 0.5;
        }
        let Some((na, nb, nd)) = accepted else {
            return Some((a, b, d));
        };
        let small_step = (na - a).abs() <= 1e-10 * (a + b) && (nb - b).abs() <= 1e-10 * (a + b);
        let small_gain = d - nd <= 1e-15 * (1.0 + d);
        a = na;
        b = nb;
        d = nd;
        if small_step || small_gain {
            return Some((a, b, d));
        }
    }
    None
}

/// One-variable Newton step where the curvature is positive; otherwise head
/// for the boundary (downhill towards zero) or double the value.
fn coordinate_step(x: f64, g: f64, h: f64) -> f64 {
    if h > 0.0 {
        -g / h
    } else if g > 0.0 {
        -x
    } else {
        x.max(f64::MIN_POSITIVE)
    }
}

fn grid_search(phi: &[f64], u: &[f64], c: &[f64], a0: f64, b0: f64) -> (f64, f64, f64) {
    let axis = |top: f64| -> Vec<f64> {
        let mut v = vec![0.0];
        if top > 0.0 {
            let lo = (top * 1e-6).ln();
            let hi = (top * 2.0).ln();
            v.extend((0..200).map(|i| (lo + (hi - lo) * i as f64 / 199.0).exp()));
        }
        v
    };
    let mut best = (0.0, 0.0, f64::INFINITY);
    for &a in &axis(a0) {
        for &b in &axis(b0) {
            let d = is_of(phi, u, c, a, b);
            if d < best.2 {
                best = (a, b, d);
            }
        }
    }
    best
}

/// Best shape pair for one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookMatch {
    pub i_star: usize,
    pub j_star: usize,
    pub sigma_u2: f64,
    pub sigma_c2: f64,
    pub distance: f64,
    /// The spectrum was (numerically) silent; both variances are zero.
    pub silent: bool,
    pub fallback: bool,
}

/// Unit-gain shapes of both codebooks sampled on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBank {
    bins: usize,
    unvoiced: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
}

impl ShapeBank {
    pub fn new(cb_u: &Codebook, cb_c: &Codebook, bins: usize) -> Result<Self> {
        Self::from_shapes(cb_u.shapes(bins)?, cb_c.shapes(bins)?)
    }

    pub fn from_shapes(unvoiced: Vec<Spectrum>, noise: Vec<Spectrum>) -> Result<Self> {
        if unvoiced.is_empty() || noise.is_empty() {
            return Err(Error::InvalidInput("both shape sets must be non-empty".into()));
        }
        let bins = unvoiced[0].bins();
        for s in unvoiced.iter().chain(&noise) {
            if s.bins() != bins {
                return Err(Error::GridMismatch(bins, s.bins()));
            }
            if let Some(i) = s.values().iter().position(|&v| v <= 0.0) {
                return Err(Error::ZeroModelBin(i));
            }
        }
        Ok(Self {
            bins,
            unvoiced: unvoiced.into_iter().map(|s| s.values().to_vec()).collect(),
            noise: noise.into_iter().map(|s| s.values().to_vec()).collect(),
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn unvoiced_len(&self) -> usize {
        self.unvoiced.len()
    }

    pub fn noise_len(&self) -> usize {
        self.noise.len()
    }

    pub fn unvoiced_shape(&self, i: usize) -> &[f64] {
        &self.unvoiced[i]
    }

    pub fn noise_shape(&self, j: usize) -> &[f64] {
        &self.noise[j]
    }
}

/// Exhaustive search over all shape pairs; ties go to the lowest `(i, j)`.
pub fn search_shapes(phi: &Spectrum, bank: &ShapeBank) -> Result<CodebookMatch> {
    if phi.bins() != bank.bins {
        return Err(Error::GridMismatch(phi.bins(), bank.bins));
    }
    if phi.mean() < ENERGY_FLOOR {
        return Ok(CodebookMatch {
            i_star: 0,
            j_star: 0,
            sigma_u2: 0.0,
            sigma_c2: 0.0,
            distance: 0.0,
            silent: true,
            fallback: false,
        });
    }
    let nc = bank.noise.len();
    let (idx, est) = (0..bank.unvoiced.len() * nc)
        .into_par_iter()
        .map(|p| {
            let est = variances_unchecked(phi.values(), &bank.unvoiced[p / nc], &bank.noise[p % nc]);
            (p, est)
        })
        .reduce_with(|x, y| {
            match x.1.distance.total_cmp(&y.1.distance).then(x.0.cmp(&y.0)) {
                std::cmp::Ordering::Greater => y,
                _ => x,
            }
        })
        .expect("shape bank is non-empty");
    Ok(CodebookMatch {
        i_star: idx / nc,
        j_star: idx % nc,
        sigma_u2: est.sigma_u2,
        sigma_c2: est.sigma_c2,
        distance: est.distance,
        silent: false,
        fallback: est.fallback,
    })
}

/// [`search_shapes`] with the shapes sampled on the spectrum's own grid.
pub fn search(phi: &Spectrum, cb_u: &Codebook, cb_c: &Codebook) -> Result<CodebookMatch> {
    search_shapes(phi, &ShapeBank::new(cb_u, cb_c, phi.bins())?)
}

/// Modelled residual spectrum `s_u shape_u + s_c shape_c` of a match.
pub fn matched_spectrum(bank: &ShapeBank, m: &CodebookMatch) -> Result<Spectrum> {
    let u = bank.unvoiced_shape(m.i_star);
    let c = bank.noise_shape(m.j_star);
    Spectrum::new(
        u.iter()
            .zip(c)
            .map(|(a, b)| m.sigma_u2 * a + m.sigma_c2 * b)
            .collect(),
    )
}
