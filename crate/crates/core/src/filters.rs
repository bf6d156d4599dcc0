//! Pre/post filter design from the water-filling solution and their
//! finite, delay-compensated FIR realizations.
//!
//! Filters are zero phase: the taps are real and symmetric, so the
//! post-filter (the time reversal of the pre-filter) has the same taps and
//! `H2 = conj(H1) = H1` holds exactly on the grid.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::spectra::{grid_phase, PowerSpectrum};

/// Default FIR length.
pub const DEFAULT_FIR_TAPS: usize = 257;

/// Fraction of each tail of the impulse response covered by the cosine taper.
const TAPER_FRACTION: f64 = 0.5;

/// `|H1(f)|^2 = 1 - min(theta, S)/S` on the grid, with `0/0 = 1`.
pub fn design_prefilter_mag2<T: Real>(spec: &PowerSpectrum<T>, theta: T) -> Vec<T> {
    spec.values()
        .iter()
        .map(|&s| {
            if s > T::zero() {
                (T::one() - s.min(theta) / s).max(T::zero())
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Impulse responses and reconstruction delay of a realized filter pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterPair<T> {
    /// Target `|H1|^2` on the grid.
    pub mag2_grid: Vec<T>,
    pub pre_taps: Vec<T>,
    pub post_taps: Vec<T>,
    /// Samples of lag introduced by each filter, `(taps - 1) / 2`.
    pub delay: usize,
    /// RMS error of the realized `|H1|^2` against the target, over the grid.
    pub l2_error: T,
    /// Largest pointwise error of the realized `|H1|^2`.
    pub max_error: T,
}

impl<T: Real> FilterPair<T> {
    pub fn num_taps(&self) -> usize {
        self.pre_taps.len()
    }

    /// Realized `|H1(f_i)|^2` of the FIR pre-filter.
    pub fn realized_mag2(&self) -> Vec<T> {
        let amp = zero_phase_response(&self.pre_taps, self.mag2_grid.len());
        amp.into_iter().map(|a| a * a).collect()
    }

    /// True when the pre-filter is identically zero (full stop band).
    pub fn is_stop(&self) -> bool {
        self.pre_taps.iter().all(|&h| h == T::zero())
    }
}

/// Zero-phase FIR realization of `sqrt(mag2_grid)` with `num_taps` taps.
///
/// The ideal impulse response is the inverse grid transform of the
/// amplitude, truncated to `num_taps` centered taps and tapered with a
/// raised-cosine (Tukey) window.
pub fn realize_filter_pair<T: Real>(mag2_grid: &[T], num_taps: usize) -> Result<FilterPair<T>> {
    let g = mag2_grid.len();
    if num_taps.is_multiple_of(2) || num_taps == 0 {
        return Err(Error::InvalidParameter(format!("FIR length {num_taps} must be odd")));
    }
    if num_taps > g {
        return Err(Error::InvalidParameter(format!(
            "FIR length {num_taps} exceeds grid size {g}"
        )));
    }
    let half = (num_taps - 1) / 2;
    let amp: Vec<T> = mag2_grid.iter().map(|&m| m.max(T::zero()).sqrt()).collect();
    let scale = T::from_count(g);
    let window = tukey_window::<T>(half);
    let mut center = vec![T::zero(); half + 1];
    for (n, c) in center.iter_mut().enumerate() {
        let h = amp
            .iter()
            .enumerate()
            .map(|(i, &a)| a * grid_phase::<T>(i, n as i64, g).cos())
            .sum::<T>()
            / scale;
        *c = h * window[n];
    }
    let mut taps = Vec::with_capacity(num_taps);
    taps.extend(center.iter().rev().copied());
    taps.extend(center.iter().skip(1).copied());

    let realized = zero_phase_response(&taps, g);
    let (mut sq, mut worst) = (T::zero(), T::zero());
    for (r, &target) in realized.iter().zip(mag2_grid) {
        let e = (*r * *r - target).abs();
        sq += e * e;
        worst = worst.max(e);
    }
    let post_taps: Vec<T> = taps.iter().rev().copied().collect();
    Ok(FilterPair {
        mag2_grid: mag2_grid.to_vec(),
        pre_taps: taps,
        post_taps,
        delay: half,
        l2_error: (sq / scale).sqrt(),
        max_error: worst,
    })
}

/// Weights `w[0..=half]` for lags `0..=half`: flat core, cosine roll-off.
fn tukey_window<T: Real>(half: usize) -> Vec<T> {
    let taper = ((half as f64 + 1.0) * TAPER_FRACTION).round() as usize;
    let flat = half + 1 - taper;
    (0..=half)
        .map(|n| {
            if n < flat || taper == 0 {
                T::one()
            } else {
                let x = (n - flat + 1) as f64 / (taper + 1) as f64;
                T::lit(0.5 * (1.0 + (std::f64::consts::PI * x).cos()))
            }
        })
        .collect()
}

/// Real frequency response on the grid of symmetric taps centered at the middle.
pub fn zero_phase_response<T: Real>(taps: &[T], grid_size: usize) -> Vec<T> {
    let half = (taps.len() - 1) / 2;
    (0..grid_size)
        .map(|i| {
            let mut acc = taps[half];
            for n in 1..=half {
                acc += (taps[half + n] + taps[half - n]) * grid_phase::<T>(i, n as i64, grid_size).cos();
            }
            acc
        })
        .collect()
}

/// Output of [`apply_fir`], aligned to the input time axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Filtered<T> {
    pub samples: Vec<T>,
    /// Indices whose computation did not touch the zero padding.
    pub valid: Range<usize>,
}

/// Convolves `signal` with `taps`, advancing the output by `delay` samples
/// so that `samples[n]` lines up with `signal[n]`. Out-of-range input is
/// taken as zero.
pub fn apply_fir<T: Real>(taps: &[T], delay: usize, signal: &[T]) -> Result<Filtered<T>> {
    let n = signal.len();
    let t = taps.len();
    if t == 0 {
        return Err(Error::InvalidParameter("empty tap vector".into()));
    }
    if n <= t {
        return Err(Error::SignalTooShort { len: n, needed: t });
    }
    if delay >= t {
        return Err(Error::InvalidParameter(format!("delay {delay} must be below tap count {t}")));
    }
    // y[m] = sum_k h[k] x[m + delay - k] = sum_j hr[j] x[m + delay + 1 - t + j]
    let reversed: Vec<T> = taps.iter().rev().copied().collect();
    let offset = delay as isize + 1 - t as isize;
    let mut out = vec![T::zero(); n];
    for (m, y) in out.iter_mut().enumerate() {
        let start = m as isize + offset;
        let j_lo = (-start).max(0) as usize;
        let j_hi = ((n as isize - start).min(t as isize)).max(0) as usize;
        if j_lo >= j_hi {
            continue;
        }
        let x0 = (start + j_lo as isize) as usize;
        *y = reversed[j_lo..j_hi]
            .iter()
            .zip(&signal[x0..x0 + (j_hi - j_lo)])
            .map(|(&h, &x)| h * x)
            .sum();
    }
    Ok(Filtered {
        samples: out,
        valid: (t - 1 - delay)..(n - delay),
    })
}
