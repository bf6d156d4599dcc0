//! Simulation of the predictive test channel and its equivalent forward
//! channel `V = U + N`.
//!
//! A run pre-filters the source, closes a DPCM-style loop around an additive
//! white Gaussian noise channel whose variance is the water level, and
//! post-filters the loop output. All loop variables are reported over a
//! statistics window that skips the loop warm-up and the filter edges.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::{apply_fir, design_prefilter_mag2, realize_filter_pair, zero_phase_response, FilterPair};
use crate::num::{nats_to_bits, Real};
use crate::prediction::{noisy_predictor, sigma_infinity, PredictorCoeffs};
use crate::spectra::{PowerSpectrum, SpectrumKind};
use crate::stats::{sample_autocorr, sample_corr, whiteness_stat, WhitenessReport};
use crate::waterfill::{rdf, slb, WaterFillSolution};

/// Lags reported for the whiteness of the channel output.
pub const WHITENESS_LAGS: usize = 20;

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Source = 0,
    Noise = 1,
    Dither = 2,
}

/// Generator for one stream of a seeded run.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Standard normal draws scaled by `std_dev`.
pub fn gaussian_sequence<T: Real>(rng: &mut impl Rng, n: usize, std_dev: T) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)) * std_dev).collect()
}

/// Parameters of one predictive-channel run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig<T> {
    pub source: PowerSpectrum<T>,
    pub distortion: T,
    pub predictor_order: usize,
    pub fir_taps: usize,
    pub samples: usize,
    pub seed: u64,
    /// Samples skipped from all statistics; `4 max(L, T)` when unset.
    pub burn_in: Option<usize>,
    pub record_traces: bool,
}

impl<T: Real> SimConfig<T> {
    pub fn new(source: PowerSpectrum<T>, distortion: T, samples: usize, seed: u64) -> Self {
        Self {
            source,
            distortion,
            predictor_order: crate::prediction::DEFAULT_PREDICTOR_ORDER,
            fir_taps: crate::filters::DEFAULT_FIR_TAPS,
            samples,
            seed,
            burn_in: None,
            record_traces: false,
        }
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(4 * self.predictor_order.max(self.fir_taps))
    }

    /// Statistics window `[burn_in, N - T)`.
    pub fn window(&self) -> Range<usize> {
        self.effective_burn_in()..self.samples - self.fir_taps
    }

    pub fn validate(&self) -> Result<()> {
        let burn = self.effective_burn_in();
        if self.samples <= 10 * burn {
            return Err(Error::InvalidParameter(format!(
                "sample count {} must exceed ten times the burn-in {burn}",
                self.samples
            )));
        }
        if self.samples <= 100 * WHITENESS_LAGS + burn + self.fir_taps {
            return Err(Error::SignalTooShort {
                len: self.samples,
                needed: 100 * WHITENESS_LAGS + burn + self.fir_taps,
            });
        }
        let var = self.source.variance();
        if !(self.distortion > T::zero() && self.distortion <= var * (T::one() + T::lit(1e-12))) {
            return Err(Error::Domain {
                name: "D",
                value: self.distortion.as_f64(),
                min: 0.0,
                max: var.as_f64(),
            });
        }
        Ok(())
    }
}

/// Water-filling solution, filters and loop predictor for a configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelDesign<T> {
    pub solution: WaterFillSolution<T>,
    pub filters: FilterPair<T>,
    pub predictor: PredictorCoeffs<T>,
}

impl<T: Real> ChannelDesign<T> {
    pub fn theta(&self) -> T {
        self.solution.theta
    }
}

/// Designs the filters and a predictor matched to the realized pre-filter.
pub fn design_channel<T: Real>(config: &SimConfig<T>) -> Result<ChannelDesign<T>> {
    config.validate()?;
    let solution = rdf(&config.source, config.distortion)?;
    let theta = solution.theta;
    let filters = realize_filter_pair(&design_prefilter_mag2(&config.source, theta), config.fir_taps)?;
    let amp = zero_phase_response(&filters.pre_taps, config.source.grid_size());
    let u_spec = PowerSpectrum::tabulated(
        amp.iter().zip(config.source.values()).map(|(&a, &s)| a * a * s).collect(),
    )?;
    let predictor = noisy_predictor(&u_spec, theta, config.predictor_order)?;
    Ok(ChannelDesign { solution, filters, predictor })
}

/// Stationary zero-mean Gaussian samples with spectrum `spec`.
pub fn synthesize_source<T: Real>(spec: &PowerSpectrum<T>, n: usize, seed: u64) -> Vec<T> {
    synthesize_with(spec, n, &mut stream_rng(seed, Stream::Source))
}

/// As [`synthesize_source`], drawing from a caller-supplied generator.
pub fn synthesize_with<T: Real>(spec: &PowerSpectrum<T>, n: usize, rng: &mut impl Rng) -> Vec<T> {
    match spec.kind() {
        SpectrumKind::White { sigma2 } => gaussian_sequence(rng, n, sigma2.sqrt()),
        SpectrumKind::Ar { a, sigma_w2 } => {
            let burn = ar_settling_time(a);
            let w = gaussian_sequence(rng, n + burn, sigma_w2.sqrt());
            let p = a.len();
            let mut x = vec![T::zero(); n + burn];
            for t in 0..n + burn {
                let mut acc = w[t];
                for (i, &ai) in a.iter().enumerate().take(t.min(p)) {
                    acc += ai * x[t - 1 - i];
                }
                x[t] = acc;
            }
            x.split_off(burn)
        }
        SpectrumKind::Ma { taps } => {
            let q = taps.len() - 1;
            let w = gaussian_sequence(rng, n + q, T::one());
            (0..n)
                .map(|t| taps.iter().enumerate().map(|(k, &b)| b * w[t + q - k]).sum())
                .collect()
        }
        SpectrumKind::Tabulated { .. } => spectral_synthesis(spec, n, rng),
    }
}

/// Samples until the AR impulse response stays below `1e-12` of its peak.
fn ar_settling_time<T: Real>(a: &[T]) -> usize {
    let p = a.len().max(1);
    let mut h = vec![T::zero(); p];
    h[0] = T::one();
    let (mut peak, mut quiet) = (T::one(), 0usize);
    let tol = T::lit(1e-12);
    for t in 1..1_000_000 {
        let next: T = a.iter().zip(&h).map(|(&ai, &hi)| ai * hi).sum();
        h.rotate_right(1);
        h[0] = next;
        peak = peak.max(next.abs());
        if next.abs() < tol * peak {
            quiet += 1;
            if quiet >= p + 16 {
                return t;
            }
        } else {
            quiet = 0;
        }
    }
    1_000_000
}

/// Circular spectral shaping of white noise; the edges of the FFT block are discarded.
fn spectral_synthesis<T: Real>(spec: &PowerSpectrum<T>, n: usize, rng: &mut impl Rng) -> Vec<T> {
    let pad = spec.grid_size();
    let m = (n + 2 * pad).next_power_of_two();
    let mut buf: Vec<Complex<T>> = gaussian_sequence::<T>(rng, m, T::one())
        .into_iter()
        .map(|w| Complex::new(w, T::zero()))
        .collect();
    let mut planner = FftPlanner::<T>::new();
    planner.plan_fft_forward(m).process(&mut buf);
    let values = spec.values();
    let mf = T::from_count(m);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = if 2 * k < m { T::from_count(k) / mf } else { T::from_count(k) / mf - T::one() };
        *b *= values[spec.cell_of(f)].sqrt();
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[pad..pad + n].iter().map(|c| c.re / mf).collect()
}

/// The loop noise: white Gaussian with variance `theta` on the noise stream.
pub fn channel_noise<T: Real>(config: &SimConfig<T>, theta: T) -> Vec<T> {
    gaussian_sequence(&mut stream_rng(config.seed, Stream::Noise), config.samples, theta.sqrt())
}

/// Fixed-coefficient one-step predictor over the loop output history.
#[derive(Clone, Debug)]
pub struct PredictionLoop<T> {
    reversed: Vec<T>,
    history: Vec<T>,
    next: usize,
}

impl<T: Real> PredictionLoop<T> {
    /// Starts with an all-zero prehistory.
    pub fn new(predictor: &PredictorCoeffs<T>) -> Self {
        let l = predictor.coeffs.len();
        Self {
            reversed: predictor.coeffs.iter().rev().copied().collect(),
            history: vec![T::zero(); 2 * l],
            next: 0,
        }
    }

    /// `sum_i a_i V[n-i]`.
    #[inline]
    pub fn predict(&self) -> T {
        let l = self.reversed.len();
        self.reversed
            .iter()
            .zip(&self.history[self.next..self.next + l])
            .map(|(&a, &v)| a * v)
            .sum()
    }

    /// Appends the newest `V[n]`.
    #[inline]
    pub fn push(&mut self, v: T) {
        let l = self.reversed.len();
        if l == 0 {
            return;
        }
        self.history[self.next] = v;
        self.history[self.next + l] = v;
        self.next = (self.next + 1) % l;
    }
}

/// Sequences of one run, aligned on a common time axis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Traces<T> {
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub z: Vec<T>,
    pub zq: Vec<T>,
    pub noise: Vec<T>,
    pub v: Vec<T>,
    pub y: Vec<T>,
}

/// Measured and theoretical quantities of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult<T> {
    pub theta: T,
    pub measured_d: T,
    pub var_z: T,
    pub var_zq: T,
    /// `1/2 log2(1 + var_z / theta)`.
    pub mi_scalar_bits: T,
    pub rate_theory_bits: T,
    pub slb_bits: T,
    /// `Pe(max(theta, S))`, the theoretical output variance of the channel.
    pub zq_variance_theory: T,
    pub zq_autocorr: Vec<T>,
    pub zq_whiteness: WhitenessReport<T>,
    pub z_lag1_autocorr: T,
    /// Correlation of `N[n]` with `Z[n]`.
    pub noise_input_corr: T,
    /// Correlation of `N[n-1]` with `Z[n]`.
    pub noise_past_input_corr: T,
    pub window: Range<usize>,
    #[serde(skip)]
    pub traces: Option<Traces<T>>,
}

impl<T: Real> SimResult<T> {
    pub fn traces(&self) -> Result<&Traces<T>> {
        self.traces.as_ref().ok_or(Error::TracesAbsent)
    }
}

/// Runs the closed loop with freshly drawn channel noise.
pub fn run_predictive_channel<T: Real>(config: &SimConfig<T>) -> Result<SimResult<T>> {
    let design = design_channel(config)?;
    let noise = channel_noise(config, design.theta());
    run_loop(config, &design, &noise)
}

/// Runs the closed loop on a given noise realization.
pub fn run_predictive_channel_with_noise<T: Real>(config: &SimConfig<T>, noise: &[T]) -> Result<SimResult<T>> {
    let design = design_channel(config)?;
    run_loop(config, &design, noise)
}

fn check_noise<T>(config: &SimConfig<T>, noise: &[T]) -> Result<()> {
    if noise.len() != config.samples {
        return Err(Error::LengthMismatch { left: config.samples, right: noise.len() });
    }
    Ok(())
}

fn run_loop<T: Real>(config: &SimConfig<T>, design: &ChannelDesign<T>, noise: &[T]) -> Result<SimResult<T>> {
    check_noise(config, noise)?;
    let x = synthesize_source(&config.source, config.samples, config.seed);
    let u = apply_fir(&design.filters.pre_taps, design.filters.delay, &x)?.samples;
    let mut lp = PredictionLoop::new(&design.predictor);
    let n = config.samples;
    let (mut z, mut zq, mut v) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    for t in 0..n {
        let pred = lp.predict();
        z[t] = u[t] - pred;
        zq[t] = z[t] + noise[t];
        v[t] = pred + zq[t];
        lp.push(v[t]);
    }
    finish(config, design, x, u, z, zq, noise.to_vec(), v)
}

/// Forward channel `V = U + N`, with the loop variables recovered from `V`
/// by the same predictor.
pub fn run_forward_equivalent<T: Real>(config: &SimConfig<T>, noise: &[T]) -> Result<SimResult<T>> {
    let design = design_channel(config)?;
    check_noise(config, noise)?;
    let x = synthesize_source(&config.source, config.samples, config.seed);
    let u = apply_fir(&design.filters.pre_taps, design.filters.delay, &x)?.samples;
    let v: Vec<T> = u.iter().zip(noise).map(|(&a, &b)| a + b).collect();
    let coeffs = &design.predictor.coeffs;
    let pred: Vec<T> = (0..v.len())
        .map(|t| coeffs.iter().enumerate().take(t).map(|(i, &a)| a * v[t - 1 - i]).sum())
        .collect();
    let z = u.iter().zip(&pred).map(|(&a, &p)| a - p).collect();
    let zq = v.iter().zip(&pred).map(|(&a, &p)| a - p).collect();
    finish(config, &design, x, u, z, zq, noise.to_vec(), v)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    config: &SimConfig<T>,
    design: &ChannelDesign<T>,
    x: Vec<T>,
    u: Vec<T>,
    z: Vec<T>,
    zq: Vec<T>,
    noise: Vec<T>,
    v: Vec<T>,
) -> Result<SimResult<T>> {
    let y = apply_fir(&design.filters.post_taps, design.filters.delay, &v)?.samples;
    let w = config.window();
    let theta = design.theta();
    let ms = |s: &[T]| s.iter().map(|&a| a * a).sum::<T>() / T::from_count(s.len());
    let err: Vec<T> = y[w.clone()].iter().zip(&x[w.clone()]).map(|(&a, &b)| a - b).collect();
    let var_z = ms(&z[w.clone()]);
    let var_zq = ms(&zq[w.clone()]);
    let whiteness = whiteness_stat(&zq[w.clone()], WHITENESS_LAGS)?;
    // a silent loop (full distortion) has no correlation structure to report
    let z_lag1 = or_zero(sample_autocorr(&z[w.clone()], 1).map(|r| r[0]))?;
    let noise_input_corr = or_zero(sample_corr(&noise[w.clone()], &z[w.clone()], 0))?;
    let noise_past_input_corr = or_zero(sample_corr(&noise[w.clone()], &z[w.clone()], 1))?;
    let zq_theory = sigma_infinity(&config.source, theta)? + theta;
    let result = SimResult {
        theta,
        measured_d: ms(&err),
        var_z,
        var_zq,
        mi_scalar_bits: nats_to_bits(T::lit(0.5) * (T::one() + var_z / theta).ln()),
        rate_theory_bits: design.solution.rate_bits(),
        slb_bits: nats_to_bits(slb(&config.source, config.distortion)?),
        zq_variance_theory: zq_theory,
        zq_autocorr: whiteness.autocorr.clone(),
        zq_whiteness: whiteness,
        z_lag1_autocorr: z_lag1,
        noise_input_corr,
        noise_past_input_corr,
        window: w,
        traces: None,
    };
    Ok(if config.record_traces {
        SimResult {
            traces: Some(Traces { x, u, z, zq, noise, v, y }),
            ..result
        }
    } else {
        result
    })
}

fn or_zero<T: Real>(r: Result<T>) -> Result<T> {
    match r {
        Err(Error::DegenerateVariance) => Ok(T::zero()),
        other => other,
    }
}

/// `1/2 log2(1 + sigma_L^2 / theta)` for the ideal pre-filter and an order-`L`
/// noisy predictor; order 0 uses the variance of the pre-filtered source.
pub fn finite_order_mi<T: Real>(spec: &PowerSpectrum<T>, distortion: T, order: usize) -> Result<T> {
    let sol = rdf(spec, distortion)?;
    let theta = sol.theta;
    let u = spec.map_values(|s| (s - theta).max(T::zero()))?;
    let sigma2 = if order == 0 {
        u.variance()
    } else {
        noisy_predictor(&u, theta, order)?.mse
    };
    Ok(nats_to_bits(T::lit(0.5) * (T::one() + sigma2 / theta).ln()))
}
