//! Entropy-coded subtractively dithered lattice quantization, standalone
//! and inside parallel or interleaved prediction loops.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::filters::apply_fir;
use crate::num::{nats_to_bits, Real};
use crate::stats::{conditional_entropy, EntropyEstimate};
use crate::testchannel::{design_channel, stream_rng, synthesize_source, ChannelDesign, PredictionLoop, SimConfig, Stream};

/// Second moment per dimension of the unscaled D4 Voronoi cell.
const D4_SECOND_MOMENT: f64 = 13.0 / 120.0;

/// Dither bins per dimension used to condition the rate of scalar quantizers.
pub const DEFAULT_DITHER_BINS: usize = 16;

/// Dither bins per dimension for block quantizers (`K > 1`).
pub const DEFAULT_BLOCK_DITHER_BINS: usize = 4;

/// Shipped lattice families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    /// `delta Z`.
    Scalar,
    /// `delta Z^K`.
    Cubic(usize),
    /// Checkerboard lattice `{x in Z^4 : sum x even}`, scaled.
    D4,
}

impl std::fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LatticeKind::Scalar => write!(f, "scalar"),
            LatticeKind::Cubic(k) => write!(f, "z{k}"),
            LatticeKind::D4 => write!(f, "d4"),
        }
    }
}

/// Parses `scalar`, `zK` (for example `z4`) or `d4`.
impl std::str::FromStr for LatticeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scalar" => Ok(LatticeKind::Scalar),
            "d4" => Ok(LatticeKind::D4),
            other => other
                .strip_prefix('z')
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(LatticeKind::Cubic)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown lattice '{s}' (expected scalar, zK or d4)"))),
        }
    }
}

/// A scaled lattice with a closed-form nearest-point rule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lattice<T> {
    pub kind: LatticeKind,
    pub scale: T,
}

impl<T: Real> Lattice<T> {
    pub fn new(kind: LatticeKind, scale: T) -> Result<Self> {
        if !(scale > T::zero() && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("lattice scale {scale} must be > 0")));
        }
        if kind == LatticeKind::Cubic(0) {
            return Err(Error::InvalidParameter("cubic lattice needs dimension >= 1".into()));
        }
        Ok(Self { kind, scale })
    }

    /// Scaled so that the noise variance per dimension is `second_moment`.
    pub fn with_second_moment(kind: LatticeKind, second_moment: T) -> Result<Self> {
        let unit = Self::new(kind, T::one())?.second_moment_per_dim();
        Self::new(kind, (second_moment / unit).sqrt())
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            LatticeKind::Scalar => 1,
            LatticeKind::Cubic(k) => k,
            LatticeKind::D4 => 4,
        }
    }

    /// Basis vectors as rows.
    pub fn generator(&self) -> Vec<Vec<T>> {
        let k = self.dimension();
        let s = self.scale;
        match self.kind {
            LatticeKind::D4 => [[2.0, 0.0, 0.0, 0.0], [-1.0, 1.0, 0.0, 0.0], [0.0, -1.0, 1.0, 0.0], [0.0, 0.0, -1.0, 1.0]]
                .iter()
                .map(|r| r.iter().map(|&v| T::lit(v) * s).collect())
                .collect(),
            _ => (0..k)
                .map(|i| (0..k).map(|j| if i == j { s } else { T::zero() }).collect())
                .collect(),
        }
    }

    pub fn cell_volume(&self) -> T {
        let k = self.dimension() as i32;
        match self.kind {
            LatticeKind::D4 => T::lit(2.0) * self.scale.powi(k),
            _ => self.scale.powi(k),
        }
    }

    /// `(1/K) E|u|^2` for `u` uniform on the Voronoi cell.
    pub fn second_moment_per_dim(&self) -> T {
        let s2 = self.scale * self.scale;
        match self.kind {
            LatticeKind::D4 => T::lit(D4_SECOND_MOMENT) * s2,
            _ => s2 / T::lit(12.0),
        }
    }

    /// Half-width of the axis-aligned box containing the Voronoi cell.
    pub fn cell_half_width(&self) -> T {
        match self.kind {
            LatticeKind::D4 => self.scale,
            _ => self.scale / T::lit(2.0),
        }
    }

    /// Integer coordinates (in units of `scale`) of the lattice point nearest `x`.
    pub fn nearest_coords(&self, x: &[T]) -> Vec<i64> {
        let y: Vec<T> = x.iter().map(|&v| v / self.scale).collect();
        let mut r: Vec<T> = y.iter().map(|v| v.round_ties_even()).collect();
        if self.kind == LatticeKind::D4 {
            let parity = r.iter().map(|v| v.to_i64().unwrap_or(0)).sum::<i64>().rem_euclid(2);
            if parity == 1 {
                let (worst, _) = y
                    .iter()
                    .zip(&r)
                    .map(|(&a, &b)| (a - b).abs())
                    .enumerate()
                    .fold((0, -T::one()), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
                let step = if y[worst] >= r[worst] { T::one() } else { -T::one() };
                r[worst] += step;
            }
        }
        r.iter().map(|v| v.to_i64().unwrap_or(0)).collect()
    }

    /// The lattice point nearest `x`.
    pub fn nearest_point(&self, x: &[T]) -> Vec<T> {
        self.point(&self.nearest_coords(x))
    }

    pub fn point(&self, coords: &[i64]) -> Vec<T> {
        coords.iter().map(|&c| T::from_i64(c).unwrap() * self.scale).collect()
    }

    /// Uniform draw from the Voronoi cell of the origin.
    pub fn sample_cell(&self, rng: &mut impl Rng) -> Vec<T> {
        let k = self.dimension();
        // a fundamental region reduced modulo the lattice is uniform on the cell
        let u: Vec<T> = (0..k)
            .map(|i| {
                let span = if self.kind == LatticeKind::D4 && i == 0 { 2.0 } else { 1.0 };
                T::lit(rng.random::<f64>() * span) * self.scale
            })
            .collect();
        let q = self.nearest_point(&u);
        u.iter().zip(&q).map(|(&a, &b)| a - b).collect()
    }

    /// Shortest nonzero vectors, which bound the Voronoi cell.
    pub fn relevant_vectors(&self) -> Vec<Vec<T>> {
        let k = self.dimension();
        let mut out = Vec::new();
        match self.kind {
            LatticeKind::D4 => {
                for i in 0..4 {
                    for j in i + 1..4 {
                        for (si, sj) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                            let mut v = vec![0i64; 4];
                            v[i] = si;
                            v[j] = sj;
                            out.push(self.point(&v));
                        }
                    }
                }
            }
            _ => {
                for i in 0..k {
                    for s in [1i64, -1] {
                        let mut v = vec![0i64; k];
                        v[i] = s;
                        out.push(self.point(&v));
                    }
                }
            }
        }
        out
    }

    /// True when `v` lies in the (closed) Voronoi cell of the origin, up to
    /// a relative tolerance.
    pub fn in_cell(&self, v: &[T], tol: T) -> bool {
        self.relevant_vectors().iter().all(|p| {
            let dot: T = v.iter().zip(p).map(|(&a, &b)| a * b).sum();
            let norm: T = p.iter().map(|&b| b * b).sum();
            T::lit(2.0) * dot <= norm * (T::one() + tol)
        })
    }
}

/// Whether the dither is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DitherMode {
    Subtractive,
    /// Plain lattice rounding, for tests.
    Disabled,
}

/// Sample-level record of a quantizer run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcdqRun<T> {
    pub lattice: Lattice<T>,
    pub input: Vec<T>,
    pub dither: Vec<T>,
    /// Integer lattice coordinates, `K` per block.
    pub symbols: Vec<i64>,
    pub reconstruction: Vec<T>,
    /// `reconstruction - input`.
    pub noise: Vec<T>,
    /// Per-coordinate scale applied around the lattice (all ones when
    /// quantizing the input directly); `dither` is stored multiplied by it.
    pub scales: Vec<T>,
    pub seed: u64,
    pub dither_mode: DitherMode,
}

impl<T: Real> EcdqRun<T> {
    pub fn dimension(&self) -> usize {
        self.lattice.dimension()
    }

    pub fn blocks(&self) -> usize {
        self.input.len() / self.dimension()
    }

    /// Restriction to blocks `range`.
    pub fn slice_blocks(&self, range: Range<usize>) -> Self {
        let k = self.dimension();
        let s = range.start * k..range.end * k;
        Self {
            lattice: self.lattice.clone(),
            input: self.input[s.clone()].to_vec(),
            dither: self.dither[s.clone()].to_vec(),
            symbols: self.symbols[s.clone()].to_vec(),
            reconstruction: self.reconstruction[s.clone()].to_vec(),
            noise: self.noise[s].to_vec(),
            scales: self.scales.clone(),
            seed: self.seed,
            dither_mode: self.dither_mode,
        }
    }

    /// Every normalized `-noise` block lies in the basic cell.
    pub fn noise_in_cell(&self) -> bool {
        let k = self.dimension();
        let tol = T::lit(1e-9);
        self.noise.chunks(k).all(|blk| {
            let v: Vec<T> = blk.iter().zip(&self.scales).map(|(&n, &s)| -n / s).collect();
            self.lattice.in_cell(&v, tol)
        })
    }

    /// Exact identity `reconstruction - input - noise == 0`.
    pub fn noise_identity_holds(&self) -> bool {
        self.reconstruction
            .iter()
            .zip(&self.input)
            .zip(&self.noise)
            .all(|((&r, &z), &n)| (r - z) - n == T::zero())
    }
}

/// Block quantizer with an internal dither generator.
#[derive(Clone, Debug)]
pub struct EcdqQuantizer<R> {
    rng: R,
    mode: DitherMode,
}

impl<R: Rng> EcdqQuantizer<R> {
    pub fn new(rng: R, mode: DitherMode) -> Self {
        Self { rng, mode }
    }

    /// Quantizes one block `z` (already divided by its scales); returns
    /// `(dither, coords, reconstruction)` in lattice units.
    pub fn quantize<T: Real>(&mut self, lattice: &Lattice<T>, z: &[T]) -> (Vec<T>, Vec<i64>, Vec<T>) {
        let d = match self.mode {
            DitherMode::Subtractive => lattice.sample_cell(&mut self.rng),
            DitherMode::Disabled => vec![T::zero(); z.len()],
        };
        let shifted: Vec<T> = z.iter().zip(&d).map(|(&a, &b)| a + b).collect();
        let coords = lattice.nearest_coords(&shifted);
        let q = lattice.point(&coords);
        let rec = q.iter().zip(&d).map(|(&a, &b)| a - b).collect();
        (d, coords, rec)
    }
}

/// Quantizes `signal` in blocks of the lattice dimension.
pub fn ecdq_encode<T: Real>(signal: &[T], lattice: &Lattice<T>, seed: u64, mode: DitherMode) -> Result<EcdqRun<T>> {
    let k = lattice.dimension();
    if !signal.len().is_multiple_of(k) {
        return Err(Error::LengthMismatch { left: signal.len(), right: signal.len() / k * k });
    }
    let mut qz = EcdqQuantizer::new(stream_rng(seed, Stream::Dither), mode);
    let mut run = EcdqRun {
        lattice: lattice.clone(),
        input: signal.to_vec(),
        dither: Vec::with_capacity(signal.len()),
        symbols: Vec::with_capacity(signal.len()),
        reconstruction: Vec::with_capacity(signal.len()),
        noise: Vec::with_capacity(signal.len()),
        scales: vec![T::one(); k],
        seed,
        dither_mode: mode,
    };
    for blk in signal.chunks(k) {
        let (d, c, r) = qz.quantize(lattice, blk);
        for (&ri, &zi) in r.iter().zip(blk) {
            run.noise.push(ri - zi);
        }
        run.dither.extend(d);
        run.symbols.extend(c);
        run.reconstruction.extend(r);
    }
    Ok(run)
}

/// Operational rate estimate of an ECDQ run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateEstimate {
    pub bits_per_sample: f64,
    pub entropy: EntropyEstimate,
    pub context_order: usize,
    pub dither_bins: usize,
}

fn default_bins(k: usize) -> usize {
    if k == 1 {
        DEFAULT_DITHER_BINS
    } else {
        DEFAULT_BLOCK_DITHER_BINS
    }
}

/// `H(Q_m | dither bin of D_m, Q_{m-1}, ..., Q_{m-context_order}) / K`.
pub fn ecdq_rate<T: Real>(run: &EcdqRun<T>, context_order: usize) -> Result<RateEstimate> {
    ecdq_rate_with_bins(run, context_order, default_bins(run.dimension()))
}

pub fn ecdq_rate_with_bins<T: Real>(run: &EcdqRun<T>, context_order: usize, bins: usize) -> Result<RateEstimate> {
    if bins == 0 {
        return Err(Error::InvalidParameter("dither bins must be >= 1".into()));
    }
    let k = run.dimension();
    let mut table: HashMap<&[i64], u32> = HashMap::new();
    let symbols: Vec<u32> = run
        .symbols
        .chunks(k)
        .map(|c| {
            let next = table.len() as u32;
            *table.entry(c).or_insert(next)
        })
        .collect();
    let half = run.lattice.cell_half_width();
    let side: Vec<u32> = run
        .dither
        .chunks(k)
        .map(|d| {
            d.iter().zip(&run.scales).fold(0u32, |acc, (&v, &sc)| {
                let pos = ((v / sc + half) / (T::lit(2.0) * half) * T::from_count(bins)).floor();
                let b = pos.to_i64().unwrap_or(0).clamp(0, bins as i64 - 1) as u32;
                acc * bins as u32 + b
            })
        })
        .collect();
    let entropy = conditional_entropy(&symbols, Some(&side), context_order)?;
    Ok(RateEstimate {
        bits_per_sample: entropy.bits() / k as f64,
        entropy,
        context_order,
        dither_bins: bins,
    })
}

/// Chi-square test of dither uniformity at the 5% level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub critical: f64,
    pub pass: bool,
}

/// Scalar dither: 16 equal sub-intervals. Block dither: the sign orthants
/// of the first four coordinates, which split every shipped cell evenly.
pub fn dither_uniformity<T: Real>(run: &EcdqRun<T>) -> Result<ChiSquareReport> {
    let k = run.dimension();
    let half = run.lattice.cell_half_width();
    let cells = if k == 1 { 16 } else { 1usize << k.min(4) };
    let mut counts = vec![0u64; cells];
    for raw in run.dither.chunks(k) {
        let d: Vec<T> = raw.iter().zip(&run.scales).map(|(&v, &sc)| v / sc).collect();
        let idx = if k == 1 {
            let pos = ((d[0] + half) / (T::lit(2.0) * half) * T::lit(16.0)).floor();
            pos.to_usize().unwrap_or(0).min(15)
        } else {
            d.iter().take(4).enumerate().fold(0, |acc, (i, &v)| acc | (usize::from(v >= T::zero()) << i))
        };
        counts[idx] += 1;
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::SignalTooShort { len: 0, needed: 1 });
    }
    let expect = total as f64 / cells as f64;
    let statistic = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let dof = cells - 1;
    let critical = ChiSquared::new(dof as f64)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .inverse_cdf(0.95);
    Ok(ChiSquareReport {
        statistic,
        degrees_of_freedom: dof,
        critical,
        pass: statistic < critical,
    })
}

/// Loop statistics of one source (or one interleaved segment).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopStats<T> {
    pub theta: T,
    pub measured_d: T,
    pub var_z: T,
    pub var_zq: T,
    pub var_noise: T,
    pub mi_scalar_bits: T,
}

/// Per-loop sequences from a vector-quantized run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopTrace<T> {
    pub x: Vec<T>,
    pub z: Vec<T>,
    pub zq: Vec<T>,
    pub noise: Vec<T>,
    pub v: Vec<T>,
    pub y: Vec<T>,
}

/// Result of [`vq_dpcm_run`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VqDpcmReport<T> {
    pub lattice: Lattice<T>,
    pub interleave_depth: usize,
    pub per_source: Vec<LoopStats<T>>,
    pub rate: RateEstimate,
    pub rate_theory_bits: T,
    /// Blocks of the statistics window, in time order.
    #[serde(skip)]
    pub ecdq: EcdqRun<T>,
    #[serde(skip)]
    pub traces: Option<Vec<LoopTrace<T>>>,
}

/// Prediction loops quantized jointly by a lattice ECDQ.
///
/// With `K` configurations and `interleave_depth == 1`, each configuration
/// is an independent source with its own pre-filter and loop, and the `K`
/// prediction errors of a time step form one block. With one configuration
/// and `interleave_depth == K`, the pre-filtered source is cut into `K`
/// consecutive segments that play the role of the parallel sources.
pub fn vq_dpcm_run<T: Real>(
    sources: &[SimConfig<T>],
    lattice_kind: LatticeKind,
    interleave_depth: usize,
    context_order: usize,
) -> Result<VqDpcmReport<T>> {
    let unit = Lattice::new(lattice_kind, T::one())?;
    let k = unit.dimension();
    let interleaved = match (sources.len(), interleave_depth) {
        (n, 1) if n == k => false,
        (1, d) if d == k && k > 1 => true,
        _ => {
            return Err(Error::InvalidParameter(format!(
                "lattice dimension {k} needs {k} sources or one source interleaved {k} ways (got {} sources, depth {interleave_depth})",
                sources.len()
            )))
        }
    };
    let designs: Vec<ChannelDesign<T>> = sources.iter().map(design_channel).collect::<Result<_>>()?;
    let m = unit.second_moment_per_dim();

    // pre-filtered inputs per loop
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for (cfg, des) in sources.iter().zip(&designs) {
        let x = synthesize_source(&cfg.source, cfg.samples, cfg.seed);
        us.push(apply_fir(&des.filters.pre_taps, des.filters.delay, &x)?.samples);
        xs.push(x);
    }
    let (loop_inputs, loop_designs): (Vec<Vec<T>>, Vec<&ChannelDesign<T>>) = if interleaved {
        let n = sources[0].samples;
        if !n.is_multiple_of(k) {
            return Err(Error::InvalidParameter(format!("sample count {n} not divisible by interleave depth {k}")));
        }
        let seg = n / k;
        if seg <= 10 * sources[0].effective_burn_in() {
            return Err(Error::InvalidParameter(format!("segment length {seg} too short for the burn-in")));
        }
        (us[0].chunks(seg).map(<[T]>::to_vec).collect(), vec![&designs[0]; k])
    } else {
        if sources.windows(2).any(|w| w[0].samples != w[1].samples) {
            return Err(Error::InvalidParameter("parallel sources need equal sample counts".into()));
        }
        (us, designs.iter().collect())
    };
    let steps = loop_inputs[0].len();
    let scales: Vec<T> = loop_designs.iter().map(|d| (d.theta() / m).sqrt()).collect();
    let mut loops: Vec<PredictionLoop<T>> = loop_designs.iter().map(|d| PredictionLoop::new(&d.predictor)).collect();
    let mut qz = EcdqQuantizer::new(stream_rng(sources[0].seed, Stream::Dither), DitherMode::Subtractive);

    let mut z = vec![vec![T::zero(); steps]; k];
    let mut zq = vec![vec![T::zero(); steps]; k];
    let mut v = vec![vec![T::zero(); steps]; k];
    let mut dither = Vec::with_capacity(steps * k);
    let mut symbols = Vec::with_capacity(steps * k);
    let mut block = vec![T::zero(); k];
    let mut preds = vec![T::zero(); k];
    for t in 0..steps {
        for j in 0..k {
            preds[j] = loops[j].predict();
            z[j][t] = loop_inputs[j][t] - preds[j];
            block[j] = z[j][t] / scales[j];
        }
        let (d, c, r) = qz.quantize(&unit, &block);
        for j in 0..k {
            zq[j][t] = r[j] * scales[j];
            v[j][t] = preds[j] + zq[j][t];
            loops[j].push(v[j][t]);
        }
        dither.extend(d.iter().zip(&scales).map(|(&a, &s)| a * s));
        symbols.extend(c);
    }
    let noise: Vec<Vec<T>> = (0..k)
        .map(|j| zq[j].iter().zip(&z[j]).map(|(&a, &b)| a - b).collect())
        .collect();

    // reconstruction per source
    let outputs: Vec<(Vec<T>, Vec<T>)> = if interleaved {
        let full: Vec<T> = v.concat();
        let des = &designs[0];
        vec![(xs[0].clone(), apply_fir(&des.filters.post_taps, des.filters.delay, &full)?.samples)]
    } else {
        designs
            .iter()
            .zip(&v)
            .zip(&xs)
            .map(|((des, vj), x)| Ok((x.clone(), apply_fir(&des.filters.post_taps, des.filters.delay, vj)?.samples)))
            .collect::<Result<_>>()?
    };

    let cfg0 = &sources[0];
    let burn = cfg0.effective_burn_in();
    let loop_window = if interleaved { burn..steps } else { burn..steps - cfg0.fir_taps };
    let ms = |s: &[T]| s.iter().map(|&a| a * a).sum::<T>() / T::from_count(s.len());
    let distortion_of = |x: &[T], y: &[T], w: Range<usize>| {
        let e: Vec<T> = y[w.clone()].iter().zip(&x[w]).map(|(&a, &b)| a - b).collect();
        ms(&e)
    };
    let per_source: Vec<LoopStats<T>> = (0..k)
        .map(|j| {
            let des = loop_designs[j];
            let measured_d = if interleaved {
                let seg = steps;
                let (x, y) = &outputs[0];
                let lo = (j * seg + burn).max(burn);
                let hi = ((j + 1) * seg).min(x.len() - cfg0.fir_taps);
                distortion_of(x, y, lo..hi)
            } else {
                let (x, y) = &outputs[j];
                distortion_of(x, y, sources[j].window())
            };
            let w = loop_window.clone();
            let var_z = ms(&z[j][w.clone()]);
            LoopStats {
                theta: des.theta(),
                measured_d,
                var_z,
                var_zq: ms(&zq[j][w.clone()]),
                var_noise: ms(&noise[j][w]),
                mi_scalar_bits: nats_to_bits(T::lit(0.5) * (T::one() + var_z / des.theta()).ln()),
            }
        })
        .collect();

    let interleave = |rows: &[Vec<T>]| -> Vec<T> { (0..steps).flat_map(|t| rows.iter().map(move |r| r[t])).collect() };
    let full_run = EcdqRun {
        lattice: unit.clone(),
        input: interleave(&z),
        dither,
        symbols,
        reconstruction: interleave(&zq),
        noise: interleave(&noise),
        scales: scales.clone(),
        seed: cfg0.seed,
        dither_mode: DitherMode::Subtractive,
    };
    let ecdq = full_run.slice_blocks(loop_window);
    let rate = ecdq_rate(&ecdq, context_order)?;
    let rate_theory_bits = designs.iter().map(|d| d.solution.rate_bits()).sum::<T>() / T::from_count(designs.len());
    let traces = if sources.iter().any(|c| c.record_traces) {
        Some(
            (0..k)
                .map(|j| {
                    let (x, y) = if interleaved { &outputs[0] } else { &outputs[j] };
                    LoopTrace {
                        x: x.clone(),
                        z: z[j].clone(),
                        zq: zq[j].clone(),
                        noise: noise[j].clone(),
                        v: v[j].clone(),
                        y: y.clone(),
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(VqDpcmReport {
        lattice: Lattice::new(lattice_kind, scales[0])?,
        interleave_depth,
        per_source,
        rate,
        rate_theory_bits,
        ecdq,
        traces,
    })
}

/// D4 nearest point by search over the 81 integer neighbours of `x`
/// (lattice units); an independent check of [`Lattice::nearest_coords`].
pub fn d4_nearest_exhaustive(x: &[f64]) -> Vec<i64> {
    let base: Vec<i64> = x.iter().map(|v| v.floor() as i64).collect();
    let mut best = (f64::INFINITY, vec![]);
    for mask in 0..81 {
        let mut c = vec![0i64; 4];
        let mut m = mask;
        for i in 0..4 {
            c[i] = base[i] + (m % 3) as i64 - 1;
            m /= 3;
        }
        if c.iter().sum::<i64>().rem_euclid(2) != 0 {
            continue;
        }
        let d: f64 = c.iter().zip(x).map(|(&a, &b)| (a as f64 - b).powi(2)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::PowerSpectrum;
    use crate::stats::{sample_corr, sample_variance};
    use crate::testchannel::{gaussian_sequence, run_predictive_channel_with_noise};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d4() -> Lattice<f64> {
        Lattice::new(LatticeKind::D4, 1.0).unwrap()
    }

    /// Exhaustive nearest D4 point among the even-sum integer vectors near `x`.
    #[test]
    fn lattice_names_round_trip() {
        for kind in [LatticeKind::Scalar, LatticeKind::Cubic(3), LatticeKind::D4] {
            assert_eq!(kind.to_string().parse::<LatticeKind>().unwrap(), kind);
        }
        assert_eq!("Z4".parse::<LatticeKind>().unwrap(), LatticeKind::Cubic(4));
        assert!("z0".parse::<LatticeKind>().is_err());
        assert!("e8".parse::<LatticeKind>().is_err());
    }

    #[test]
    fn scalar_rounding() {
        let l = Lattice::new(LatticeKind::Scalar, 1.0).unwrap();
        assert_eq!(l.nearest_coords(&[0.4]), vec![0]);
        assert_eq!(l.nearest_coords(&[0.5]), vec![0]);
        assert_eq!(l.nearest_coords(&[1.5]), vec![2]);
        assert_eq!(l.nearest_coords(&[-0.6]), vec![-1]);
        let l = Lattice::new(LatticeKind::Scalar, 0.5).unwrap();
        assert_eq!(l.nearest_point(&[0.8]), vec![1.0]);
    }

    #[test]
    fn d4_examples() {
        let l = d4();
        let c = l.nearest_coords(&[0.6, 0.6, 0.6, 0.6]);
        assert_eq!(c.iter().sum::<i64>() % 2, 0);
        let dist = |c: &[i64]| c.iter().map(|&a| (a as f64 - 0.6).powi(2)).sum::<f64>();
        assert!((dist(&c) - dist(&d4_nearest_exhaustive(&[0.6; 4]))).abs() < 1e-12);
        assert_eq!(l.nearest_coords(&[0.9, 0.4, 0.0, 0.0]), vec![1, 1, 0, 0]);
        assert_eq!(l.nearest_coords(&[1.1, -0.9, 2.0, 0.0]), vec![1, -1, 2, 0]);
    }

    #[test]
    fn d4_matches_exhaustive_search() {
        let l = d4();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = l.nearest_coords(&x);
            let b = d4_nearest_exhaustive(&x);
            let da: f64 = a.iter().zip(&x).map(|(&p, &q)| (p as f64 - q).powi(2)).sum();
            let db: f64 = b.iter().zip(&x).map(|(&p, &q)| (p as f64 - q).powi(2)).sum();
            assert!((da - db).abs() < 1e-12, "{x:?}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn lattice_geometry() {
        let l = d4();
        assert_eq!(l.cell_volume(), 2.0);
        assert_eq!(l.relevant_vectors().len(), 24);
        let g = l.generator();
        assert!(g.iter().all(|row| row.iter().map(|v| *v as i64).sum::<i64>() % 2 == 0));
        let normalized = l.second_moment_per_dim() / l.cell_volume().powf(0.5);
        assert!((normalized - 0.0766).abs() < 1e-4);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [LatticeKind::Scalar, LatticeKind::Cubic(3), LatticeKind::D4] {
            let l = Lattice::with_second_moment(kind, 0.3).unwrap();
            let k = l.dimension();
            let mut acc = 0.0;
            let n = 200_000;
            for _ in 0..n {
                let u = l.sample_cell(&mut rng);
                assert!(l.in_cell(&u, 1e-12));
                acc += u.iter().map(|v| v * v).sum::<f64>();
            }
            let est = acc / (n * k) as f64;
            assert!((est / 0.3 - 1.0).abs() < 0.01, "{kind:?}: {est}");
        }
        assert!(!d4().in_cell(&[0.9, 0.9, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn scalar_noise_and_independence() {
        let l = Lattice::new(LatticeKind::Scalar, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = gaussian_sequence(&mut rng, 1_000_000, 1.0);
        let run = ecdq_encode(&z, &l, 4, DitherMode::Subtractive).unwrap();
        assert!((sample_variance(&run.noise) * 12.0 - 1.0).abs() < 0.01);
        assert!(sample_corr(&run.input, &run.noise, 0).unwrap().abs() < 3.0 / 1000.0);
        assert!(run.noise_in_cell());
        assert!(run.noise_identity_holds());
        assert!(dither_uniformity(&run).unwrap().pass);
        assert!(sample_corr(&run.input, &run.dither, 0).unwrap().abs() < 3.0 / 1000.0);

        let plain = ecdq_encode(&[0.4], &l, 0, DitherMode::Disabled).unwrap();
        assert_eq!(plain.reconstruction, vec![0.0]);
        assert!(matches!(
            ecdq_encode(&[0.0; 6], &d4(), 0, DitherMode::Subtractive),
            Err(Error::LengthMismatch { .. })
        ));
    }

    /// `I(Z; Z + U(-1/2, 1/2))` for standard normal `Z`, by quadrature.
    fn uniform_noise_mi_oracle() -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        let phi = Normal::new(0.0, 1.0).unwrap();
        let (lo, hi, n) = (-10.0, 10.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let y = lo + (i as f64 + 0.5) * h;
            let p = phi.cdf(y + 0.5) - phi.cdf(y - 0.5);
            if p > 0.0 {
                acc -= p * p.ln() * h;
            }
        }
        acc / std::f64::consts::LN_2
    }

    #[test]
    fn scalar_rate_matches_quadrature() {
        let l = Lattice::new(LatticeKind::Scalar, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = gaussian_sequence(&mut rng, 1_000_000, 1.0);
        let run = ecdq_encode(&z, &l, 6, DitherMode::Subtractive).unwrap();
        let rate = ecdq_rate(&run, 0).unwrap();
        let oracle = uniform_noise_mi_oracle();
        // the output is close to Gaussian, so h(Z + U) sits just under its Gaussian bound
        let bound = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 13.0 / 12.0).log2();
        assert!(oracle <= bound && oracle > bound - 0.01, "{oracle}");
        assert!((rate.bits_per_sample - oracle).abs() < 0.03, "{} vs {oracle}", rate.bits_per_sample);
        assert!(rate.entropy.reliable);
    }

    #[test]
    fn zero_input_has_zero_rate() {
        let l = Lattice::new(LatticeKind::Scalar, 1.0).unwrap();
        let run = ecdq_encode(&vec![0.0; 10_000], &l, 7, DitherMode::Subtractive).unwrap();
        for c in 0..3 {
            assert_eq!(ecdq_rate(&run, c).unwrap().bits_per_sample, 0.0);
        }
    }

    #[test]
    fn d4_dither_is_uniform() {
        let l = Lattice::with_second_moment(LatticeKind::D4, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<f64> = gaussian_sequence(&mut rng, 400_000, 1.0);
        let run = ecdq_encode(&z, &l, 9, DitherMode::Subtractive).unwrap();
        assert!(run.noise_in_cell());
        let chi = dither_uniformity(&run).unwrap();
        assert_eq!(chi.degrees_of_freedom, 15);
        assert!(chi.pass, "{chi:?}");
        assert!((sample_variance(&run.noise) / 0.5 - 1.0).abs() < 0.01);
    }

    fn ar_config(d: f64, n: usize, seed: u64) -> SimConfig<f64> {
        SimConfig::new(PowerSpectrum::<f64>::ar(vec![0.9], 1.0, 4096).unwrap(), d, n, seed)
    }

    #[test]
    fn scalar_loop_reduces_to_test_channel() {
        let mut cfg = ar_config(0.25, 200_000, 10);
        cfg.record_traces = true;
        let rep = vq_dpcm_run(std::slice::from_ref(&cfg), LatticeKind::Scalar, 1, 0).unwrap();
        let tr = &rep.traces.as_ref().unwrap()[0];
        let tc = run_predictive_channel_with_noise(&cfg, &tr.noise).unwrap();
        let t2 = tc.traces().unwrap();
        let dev = t2.v.iter().zip(&tr.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-9);
        assert!(rep.ecdq.noise_in_cell());
        assert!(dither_uniformity(&rep.ecdq).unwrap().pass);
        assert!((rep.per_source[0].var_noise / rep.per_source[0].theta - 1.0).abs() < 0.02);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cfg = ar_config(0.25, 200_000, 11);
        assert!(vq_dpcm_run(&[cfg.clone(), cfg.clone()], LatticeKind::D4, 1, 0).is_err());
        assert!(vq_dpcm_run(std::slice::from_ref(&cfg), LatticeKind::D4, 2, 0).is_err());
    }
}
