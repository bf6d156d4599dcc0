//! Estimation utilities: sample correlations, whiteness, plug-in entropies,
//! directed-information estimates and Welch spectral estimates.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::{mean, Real};
use crate::spectra::PowerSpectrum;

/// Largest supported context order for plug-in entropies.
pub const MAX_CONTEXT_ORDER: usize = 8;

/// Default context order for rate and directed-information estimates.
pub const DEFAULT_CONTEXT_ORDER: usize = 2;

/// Samples required per occupied table cell for an estimate to be flagged reliable.
const SAMPLES_PER_CELL: usize = 10;

/// Normalized autocorrelation `rho_1..rho_max_lag` (mean removed, biased).
pub fn sample_autocorr<T: Real>(signal: &[T], max_lag: usize) -> Result<Vec<T>> {
    let n = signal.len();
    if n <= 100 * max_lag.max(1) {
        return Err(Error::SignalTooShort { len: n, needed: 100 * max_lag.max(1) });
    }
    let m = mean(signal);
    let centered: Vec<T> = signal.iter().map(|&x| x - m).collect();
    let r0: T = centered.iter().map(|&x| x * x).sum();
    if !(r0 > T::zero()) {
        return Err(Error::DegenerateVariance);
    }
    Ok((1..=max_lag)
        .map(|k| centered.iter().zip(&centered[k..]).map(|(&a, &b)| a * b).sum::<T>() / r0)
        .collect())
}

/// Sample correlation coefficient of `x[n]` with `y[n + lag]`.
pub fn sample_corr<T: Real>(x: &[T], y: &[T], lag: isize) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    let shift = lag.unsigned_abs();
    if n <= shift + 2 {
        return Err(Error::SignalTooShort { len: n, needed: shift + 2 });
    }
    let (xs, ys) = if lag >= 0 { (&x[..n - shift], &y[shift..]) } else { (&x[shift..], &y[..n - shift]) };
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in xs.iter().zip(ys) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if !(sxx > T::zero() && syy > T::zero()) {
        return Err(Error::DegenerateVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Sample variance about the mean.
pub fn sample_variance<T: Real>(x: &[T]) -> T {
    let m = mean(x);
    mean(&x.iter().map(|&v| (v - m) * (v - m)).collect::<Vec<_>>())
}

/// Whiteness test on lags `1..=max_lag` at the `3/sqrt(N)` level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WhitenessReport<T> {
    pub max_abs: T,
    pub threshold: T,
    pub pass: bool,
    pub autocorr: Vec<T>,
}

pub fn whiteness_stat<T: Real>(signal: &[T], max_lag: usize) -> Result<WhitenessReport<T>> {
    let rho = sample_autocorr(signal, max_lag)?;
    let max_abs = rho.iter().fold(T::zero(), |m, r| m.max(r.abs()));
    let threshold = T::lit(3.0) / T::from_count(signal.len()).sqrt();
    Ok(WhitenessReport {
        max_abs,
        threshold,
        pass: max_abs < threshold,
        autocorr: rho,
    })
}

/// Discrete stream with interned symbol identifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolSequence {
    symbols: Vec<u32>,
    alphabet: usize,
    context_order: usize,
}

impl SymbolSequence {
    /// Interns arbitrary hashable symbols in order of first appearance.
    pub fn from_keys<K: Hash + Eq>(keys: impl IntoIterator<Item = K>, context_order: usize) -> Result<Self> {
        check_context_order(context_order)?;
        let mut table = HashMap::new();
        let symbols = keys
            .into_iter()
            .map(|k| {
                let next = table.len() as u32;
                *table.entry(k).or_insert(next)
            })
            .collect();
        Ok(Self {
            symbols,
            alphabet: table.len(),
            context_order,
        })
    }

    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

fn check_context_order(c: usize) -> Result<()> {
    if c > MAX_CONTEXT_ORDER {
        Err(Error::InvalidParameter(format!("context order {c} exceeds {MAX_CONTEXT_ORDER}")))
    } else {
        Ok(())
    }
}

/// Plug-in conditional entropy with table occupancy diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyEstimate {
    /// Miller-Madow corrected estimate.
    pub nats: f64,
    /// Uncorrected maximum-likelihood estimate.
    pub ml_nats: f64,
    pub samples: usize,
    pub contexts: usize,
    pub cells: usize,
    /// False when the joint table has fewer than ten samples per occupied cell.
    pub reliable: bool,
}

impl EntropyEstimate {
    pub fn bits(&self) -> f64 {
        self.nats / std::f64::consts::LN_2
    }
}

/// `H(symbol | previous context_order symbols)` of the sequence.
pub fn plug_in_entropy(seq: &SymbolSequence) -> Result<EntropyEstimate> {
    conditional_entropy(seq.symbols(), None, seq.context_order())
}

/// `H(target[n] | side[n], target[n-1], ..., target[n-context_order])` over
/// `n >= context_order`.
pub fn conditional_entropy(target: &[u32], side: Option<&[u32]>, context_order: usize) -> Result<EntropyEstimate> {
    check_context_order(context_order)?;
    if let Some(s) = side {
        if s.len() != target.len() {
            return Err(Error::LengthMismatch { left: target.len(), right: s.len() });
        }
    }
    if target.len() <= context_order {
        return Err(Error::SignalTooShort { len: target.len(), needed: context_order + 1 });
    }
    // ordered maps keep the summation order, and so the result, reproducible
    let mut joint: BTreeMap<([u32; MAX_CONTEXT_ORDER + 1], u32), u64> = BTreeMap::new();
    let mut marginal: BTreeMap<[u32; MAX_CONTEXT_ORDER + 1], u64> = BTreeMap::new();
    for n in context_order..target.len() {
        let mut key = [u32::MAX; MAX_CONTEXT_ORDER + 1];
        key[0] = side.map_or(0, |s| s[n]);
        key[1..=context_order].copy_from_slice(&target[n - context_order..n]);
        *joint.entry((key, target[n])).or_insert(0) += 1;
        *marginal.entry(key).or_insert(0) += 1;
    }
    let samples = target.len() - context_order;
    let total = samples as f64;
    let ml: f64 = joint
        .iter()
        .map(|((key, _), &c)| {
            let ctx = marginal[key] as f64;
            -(c as f64 / total) * (c as f64 / ctx).ln()
        })
        .sum();
    let correction = (joint.len() as f64 - marginal.len() as f64) / (2.0 * total);
    Ok(EntropyEstimate {
        nats: (ml + correction).max(0.0),
        ml_nats: ml.max(0.0),
        samples,
        contexts: marginal.len(),
        cells: joint.len(),
        reliable: samples >= SAMPLES_PER_CELL * joint.len(),
    })
}

/// Differential entropy in nats from a Freedman-Diaconis histogram,
/// Miller-Madow corrected.
pub fn histogram_entropy<T: Real>(x: &[T]) -> Result<f64> {
    let n = x.len();
    if n < 16 {
        return Err(Error::SignalTooShort { len: n, needed: 16 });
    }
    let mut sorted: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if !(hi > lo) {
        return Err(Error::DegenerateVariance);
    }
    let iqr = sorted[3 * n / 4] - sorted[n / 4];
    let spread = if iqr > 0.0 { iqr } else { hi - lo };
    let width = 2.0 * spread / (n as f64).cbrt();
    let bins = (((hi - lo) / width).floor() as usize + 1).min(1 << 24);
    let mut counts = vec![0u64; bins];
    for &v in &sorted {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let total = n as f64;
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(h + (occupied as f64 - 1.0) / (2.0 * total) + width.ln())
}

/// Entropy functional applied to regression residuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectedInfoMethod {
    /// `1/2 log(2 pi e var)`; exact for jointly Gaussian streams.
    Gaussian,
    /// Histogram differential entropy; for quantized streams.
    PlugIn,
}

/// Causal (directed) and non-causal (ordinary) information per sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectedInfoEstimate {
    pub directed_nats: f64,
    pub ordinary_nats: f64,
    pub method: DirectedInfoMethod,
    pub block: usize,
    pub context_order: usize,
    pub blocks_used: usize,
}

impl DirectedInfoEstimate {
    pub fn directed_bits(&self) -> f64 {
        self.directed_nats / std::f64::consts::LN_2
    }

    pub fn ordinary_bits(&self) -> f64 {
        self.ordinary_nats / std::f64::consts::LN_2
    }

    /// Chain-rule excess of the ordinary estimate over the directed one.
    pub fn gap_bits(&self) -> f64 {
        self.ordinary_bits() - self.directed_bits()
    }
}

/// Estimates `I(Z_1^m; Zq_m | Zq_1^{m-1})` per sample for blocks of `block`
/// samples, with all conditioning truncated to `context_order` blocks.
///
/// The ordinary estimate is the directed estimate plus the feedback term
/// `I(Z_m; Zq_1^{m-1} | Z_1^{m-1})`, which measures how much the input
/// reacts to past outputs. Each conditional entropy is the entropy of a
/// least-squares residual; coordinates within a block are handled by the
/// chain rule. The input is a continuous stream, so the feedback term
/// always uses the Gaussian entropy.
pub fn directed_info_estimate<T: Real>(
    input: &[T],
    output: &[T],
    block: usize,
    context_order: usize,
    method: DirectedInfoMethod,
) -> Result<DirectedInfoEstimate> {
    if input.len() != output.len() {
        return Err(Error::LengthMismatch { left: input.len(), right: output.len() });
    }
    check_context_order(context_order)?;
    if block == 0 || !input.len().is_multiple_of(block) {
        return Err(Error::InvalidParameter(format!(
            "length {} is not a multiple of block size {block}",
            input.len()
        )));
    }
    let blocks = input.len() / block;
    let c = context_order;
    if blocks <= c + 100 {
        return Err(Error::SignalTooShort { len: blocks, needed: c + 101 });
    }
    let z: Vec<f64> = input.iter().map(|v| v.as_f64()).collect();
    let zq: Vec<f64> = output.iter().map(|v| v.as_f64()).collect();
    let rows: Vec<usize> = (c..blocks).collect();
    let gaussian = |r: &[f64]| -> Result<f64> {
        let v = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        if !(v > 0.0) {
            return Err(Error::DegenerateVariance);
        }
        Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln())
    };
    let entropy = |r: &[f64]| match method {
        DirectedInfoMethod::Gaussian => gaussian(r),
        DirectedInfoMethod::PlugIn => histogram_entropy(r),
    };
    let (mut directed, mut feedback) = (0.0, 0.0);
    for j in 0..block {
        let rows_at = |src: &[f64]| rows.iter().map(|&m| src[m * block + j]).collect::<Vec<f64>>();
        // past: blocks m-c..m-1 plus coordinates < j of block m
        let past = |m: usize| (m - c) * block..m * block + j;
        let causal = |m: usize| (m - c) * block..(m + 1) * block;
        let previous = |m: usize| (m - c) * block..m * block;

        let target = rows_at(&zq);
        let r1 = regression_residual(&target, &rows, &[(&zq, &past)])?;
        let r2 = regression_residual(&target, &rows, &[(&zq, &past), (&z, &causal)])?;
        directed += entropy(&r1)? - entropy(&r2)?;

        if c > 0 {
            let target = rows_at(&z);
            let r1 = regression_residual(&target, &rows, &[(&z, &past)])?;
            let r2 = regression_residual(&target, &rows, &[(&z, &past), (&zq, &previous)])?;
            feedback += gaussian(&r1)? - gaussian(&r2)?;
        }
    }
    Ok(DirectedInfoEstimate {
        directed_nats: directed / block as f64,
        ordinary_nats: (directed + feedback) / block as f64,
        method,
        block,
        context_order,
        blocks_used: rows.len(),
    })
}

type RegressorSet<'a> = (&'a [f64], &'a dyn Fn(usize) -> std::ops::Range<usize>);

/// Residual of the least-squares fit (with intercept) of `target[i]` on the
/// concatenated slices `source[range(rows[i])]` of every regressor set.
fn regression_residual(target: &[f64], rows: &[usize], sets: &[RegressorSet<'_>]) -> Result<Vec<f64>> {
    let width = 1 + sets.iter().map(|(_, r)| r(rows[0]).len()).sum::<usize>();
    let features = |i: usize, buf: &mut Vec<f64>| {
        buf.clear();
        buf.push(1.0);
        for (src, range) in sets {
            buf.extend_from_slice(&src[range(rows[i])]);
        }
    };
    let mut gram = vec![0.0; width * width];
    let mut rhs = vec![0.0; width];
    let mut buf = Vec::with_capacity(width);
    for (i, &y) in target.iter().enumerate() {
        features(i, &mut buf);
        for a in 0..width {
            rhs[a] += buf[a] * y;
            let row = &mut gram[a * width..(a + 1) * width];
            for b in a..width {
                row[b] += buf[a] * buf[b];
            }
        }
    }
    for a in 0..width {
        for b in 0..a {
            gram[a * width + b] = gram[b * width + a];
        }
    }
    let beta = solve_spd(&mut gram, &rhs, width)?;
    Ok(target
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            features(i, &mut buf);
            y - buf.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>()
        })
        .collect())
}

/// Cholesky solve with a relative ridge against exact collinearity.
fn solve_spd(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let ridge = 1e-12 * trace / n as f64;
    for i in 0..n {
        a[i * n + i] += ridge;
    }
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::NumericalDegeneracy { order: j, reflection: d });
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

/// Two-sided spectral estimate on the bins `f_k = k/L - 1/2`, `k = 0..L`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsdEstimate<T> {
    pub frequencies: Vec<T>,
    pub values: Vec<T>,
}

/// Default Welch segment length.
pub const DEFAULT_SEGMENT: usize = 256;

/// Default boxcar smoothing width in bins.
pub const DEFAULT_SMOOTHING: usize = 4;

fn hann<T: Real>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Welch estimate with a Hann window and 50% overlap, scaled so that the
/// bin average is the window-weighted sample power.
pub fn welch_psd<T: Real>(signal: &[T], segment: usize) -> Result<PsdEstimate<T>> {
    if segment < 4 || !segment.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("segment length {segment} must be a power of two >= 4")));
    }
    if signal.len() < 2 * segment {
        return Err(Error::SignalTooShort { len: signal.len(), needed: 2 * segment });
    }
    let w = hann::<T>(segment);
    let power: T = w.iter().map(|&v| v * v).sum();
    let fft = FftPlanner::<T>::new().plan_fft_forward(segment);
    let mut acc = vec![T::zero(); segment];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); segment];
    let hop = segment / 2;
    let mut count = 0usize;
    let mut start = 0;
    while start + segment <= signal.len() {
        for (b, (&x, &wn)) in buf.iter_mut().zip(signal[start..start + segment].iter().zip(&w)) {
            *b = Complex::new(x * wn, T::zero());
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = power * T::from_count(count);
    Ok(centered(acc.into_iter().map(|a| a / scale).collect()))
}

/// Expectation of [`welch_psd`] for a process with spectrum `spec`.
pub fn expected_welch_psd<T: Real>(spec: &PowerSpectrum<T>, segment: usize) -> Result<PsdEstimate<T>> {
    let r = spec.autocorrelation(segment - 1)?;
    let w = hann::<T>(segment);
    let power: T = w.iter().map(|&v| v * v).sum();
    let lagged: Vec<T> = (0..segment)
        .map(|tau| r[tau] * w.iter().zip(&w[tau..]).map(|(&a, &b)| a * b).sum::<T>() / power)
        .collect();
    let values = (0..segment)
        .map(|k| {
            let mut acc = lagged[0];
            for tau in 1..segment {
                let ph = T::lit(2.0 * std::f64::consts::PI * ((k * tau) % segment) as f64 / segment as f64);
                acc += T::lit(2.0) * lagged[tau] * ph.cos();
            }
            acc
        })
        .collect();
    Ok(centered(values))
}

/// Reorders FFT bins `0..L` to frequencies `-1/2..1/2`.
fn centered<T: Real>(mut values: Vec<T>) -> PsdEstimate<T> {
    let l = values.len();
    values.rotate_left(l / 2);
    let frequencies = (0..l).map(|k| T::from_count(k) / T::from_count(l) - T::lit(0.5)).collect();
    PsdEstimate { frequencies, values }
}

impl<T: Real> PsdEstimate<T> {
    /// Circular boxcar average over `width` neighbouring bins.
    pub fn smoothed(&self, width: usize) -> Self {
        let l = self.values.len();
        let w = width.max(1);
        let values = (0..l)
            .map(|k| (0..w).map(|j| self.values[(k + l + j - w / 2) % l]).sum::<T>() / T::from_count(w))
            .collect();
        Self {
            frequencies: self.frequencies.clone(),
            values,
        }
    }

    /// Largest `|estimate / reference - 1|` over bins where the reference
    /// exceeds `floor`.
    pub fn max_relative_deviation(&self, reference: &Self, floor: T) -> Result<T> {
        if self.values.len() != reference.values.len() {
            return Err(Error::LengthMismatch { left: self.values.len(), right: reference.values.len() });
        }
        Ok(self
            .values
            .iter()
            .zip(&reference.values)
            .filter(|(_, &r)| r > floor)
            .fold(T::zero(), |m, (&e, &r)| m.max((e / r - T::one()).abs())))
    }
}

/// Deviation of a smoothed Welch estimate of `signal` from the smoothed
/// expectation under `spec`.
pub fn psd_deviation<T: Real>(signal: &[T], spec: &PowerSpectrum<T>, segment: usize, smoothing: usize) -> Result<T> {
    let est = welch_psd(signal, segment)?.smoothed(smoothing);
    let theory = expected_welch_psd(spec, segment)?.smoothed(smoothing);
    let peak = theory.values.iter().fold(T::zero(), |m, &v| m.max(v));
    est.max_relative_deviation(&theory, peak * T::lit(1e-3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1_series(n: usize, seed: u64) -> Vec<f64> {
        let w = gaussian(n + 500, seed);
        let mut x = 0.0;
        let mut out = Vec::with_capacity(n);
        for (i, wi) in w.into_iter().enumerate() {
            x = 0.9 * x + wi;
            if i >= 500 {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn whiteness_examples() {
        let w = whiteness_stat(&gaussian(1_000_000, 1), 20).unwrap();
        assert!(w.pass, "{w:?}");
        let a = whiteness_stat(&ar1_series(200_000, 2), 20).unwrap();
        assert!(!a.pass);
        assert!((a.autocorr[0] - 0.9).abs() < 0.01);
        assert!(matches!(whiteness_stat(&vec![1.5; 5000], 20), Err(Error::DegenerateVariance)));
        assert!(matches!(sample_autocorr(&gaussian(100, 3), 2), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn correlation_lags() {
        let x = gaussian(10_000, 4);
        let mut y = vec![0.0; x.len()];
        y[1..].copy_from_slice(&x[..x.len() - 1]);
        assert!((sample_corr(&x, &y, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(sample_corr(&x, &y, 0).unwrap().abs() < 0.05);
        assert!((sample_corr(&y, &x, -1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let iid: Vec<u8> = (0..400_000).map(|_| rng.random_range(0..4u8)).collect();
        let h0 = plug_in_entropy(&SymbolSequence::from_keys(iid.iter().copied(), 0).unwrap()).unwrap();
        assert!((h0.bits() - 2.0).abs() < 0.01);
        assert!(h0.reliable);
        let h1 = plug_in_entropy(&SymbolSequence::from_keys(iid.iter().copied(), 1).unwrap()).unwrap();
        assert!((h1.bits() - h0.bits()).abs() < 0.01);

        let alt = (0..10_000).map(|i| i % 2);
        let h = plug_in_entropy(&SymbolSequence::from_keys(alt, 1).unwrap()).unwrap();
        assert!(h.bits().abs() < 0.01);

        assert!(SymbolSequence::from_keys([1, 2], 9).is_err());
    }

    #[test]
    fn entropy_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s: Vec<u32> = (0..50_000).map(|_| rng.random_range(0..7u32).min(rng.random_range(0..7u32))).collect();
        for c in 0..3 {
            let a = plug_in_entropy(&SymbolSequence::from_keys(s.iter().copied(), c).unwrap()).unwrap();
            let b = plug_in_entropy(&SymbolSequence::from_keys(s.iter().map(|v| (v * 37 + 11) % 1000), c).unwrap()).unwrap();
            assert!((a.nats - b.nats).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioning_reduces_entropy() {
        // Markov chain: repeat with probability 0.8
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = vec![0u32];
        for _ in 0..200_000 {
            let last = *s.last().unwrap();
            s.push(if rng.random_bool(0.8) { last } else { rng.random_range(0..4) });
        }
        let h: Vec<f64> = (0..4).map(|c| conditional_entropy(&s, None, c).unwrap().nats).collect();
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 1e-3);
        }
        assert!(h[0] - h[1] > 0.3);
    }

    #[test]
    fn undersampled_table_flagged() {
        let s: Vec<u32> = (0..200).map(|i| (i * 7919 % 101) as u32).collect();
        assert!(!conditional_entropy(&s, None, 1).unwrap().reliable);
    }

    #[test]
    fn side_information_lowers_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let side: Vec<u32> = (0..100_000).map(|_| rng.random_range(0..8)).collect();
        let target: Vec<u32> = side.iter().map(|s| s / 2).collect();
        let h = conditional_entropy(&target, Some(&side), 0).unwrap();
        assert!(h.nats.abs() < 1e-12);
        assert!(matches!(conditional_entropy(&target, Some(&side[1..]), 0), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn histogram_entropy_of_known_laws() {
        let g = gaussian(500_000, 9);
        let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((histogram_entropy(&g).unwrap() - exact).abs() < 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u: Vec<f64> = (0..500_000).map(|_| rng.random_range(-1.5..1.5)).collect();
        assert!((histogram_entropy(&u).unwrap() - 3.0f64.ln()).abs() < 0.01);
    }

    #[test]
    fn gaussian_channel_information() {
        // Zq = Z + N with independent Gaussian N: I = 1/2 log(1 + 4)
        let z: Vec<f64> = gaussian(200_000, 11).iter().map(|v| 2.0 * v).collect();
        let n = gaussian(200_000, 12);
        let zq: Vec<f64> = z.iter().zip(&n).map(|(a, b)| a + b).collect();
        let exact = 0.5 * 5.0f64.ln();
        for c in [0, 2] {
            let est = directed_info_estimate(&z, &zq, 1, c, DirectedInfoMethod::Gaussian).unwrap();
            assert!((est.directed_nats - exact).abs() < 0.01);
            assert!(est.gap_bits().abs() < 0.005);
            let plug = directed_info_estimate(&z, &zq, 1, c, DirectedInfoMethod::PlugIn).unwrap();
            assert!((plug.directed_nats - exact).abs() < 0.02);
        }
        let zero = directed_info_estimate(&z, &zq, 1, 0, DirectedInfoMethod::Gaussian).unwrap();
        assert_eq!(zero.directed_nats, zero.ordinary_nats);
    }

    #[test]
    fn feedback_shows_chain_rule_gap() {
        // input reacts to the previous channel noise
        let n = gaussian(200_000, 13);
        let w = gaussian(200_000, 14);
        let mut z = vec![0.0; n.len()];
        for i in 1..n.len() {
            z[i] = w[i] - 0.8 * n[i - 1];
        }
        let zq: Vec<f64> = z.iter().zip(&n).map(|(a, b)| a + b).collect();
        let est = directed_info_estimate(&z, &zq, 1, 2, DirectedInfoMethod::Gaussian).unwrap();
        assert!(est.gap_bits() > 0.1, "{est:?}");
    }

    #[test]
    fn block_estimate_matches_scalar_on_iid() {
        let z = gaussian(400_000, 15);
        let n: Vec<f64> = gaussian(400_000, 16).iter().map(|v| 0.5 * v).collect();
        let zq: Vec<f64> = z.iter().zip(&n).map(|(a, b)| a + b).collect();
        let k1 = directed_info_estimate(&z, &zq, 1, 1, DirectedInfoMethod::Gaussian).unwrap();
        let k4 = directed_info_estimate(&z, &zq, 4, 1, DirectedInfoMethod::Gaussian).unwrap();
        assert!((k1.directed_nats - k4.directed_nats).abs() < 0.01);
        assert!(directed_info_estimate(&z[..401], &zq[..401], 4, 1, DirectedInfoMethod::Gaussian).is_err());
    }

    #[test]
    fn welch_of_white_and_ar() {
        let x = gaussian(1_000_000, 17);
        let white = PowerSpectrum::<f64>::white(1.0, 4096).unwrap();
        assert!(psd_deviation(&x, &white, 256, 4).unwrap() < 0.05);
        let est = welch_psd(&x, 256).unwrap();
        let avg = est.values.iter().sum::<f64>() / 256.0;
        assert!((avg - sample_variance(&x)).abs() < 1e-2);

        let y = ar1_series(1_000_000, 18);
        let ar = PowerSpectrum::<f64>::ar(vec![0.9], 1.0, 4096).unwrap();
        assert!(psd_deviation(&y, &ar, 256, 4).unwrap() < 0.05);
        assert!(psd_deviation(&y, &white, 256, 4).unwrap() > 1.0);
    }

    #[test]
    fn expected_welch_of_white_is_flat() {
        let white = PowerSpectrum::<f64>::white(2.0, 1024).unwrap();
        let e = expected_welch_psd(&white, 64).unwrap();
        assert!(e.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert_eq!(e.frequencies[32], 0.0);
    }
}
