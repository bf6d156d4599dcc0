//! The channel-coding dual of the predictive test channel: an ISI channel
//! with colored noise, channel water-filling, and an MMSE decision-feedback
//! equalizer in noise-prediction form.
//!
//! Simulations run on the equivalent ISI-free channel `Y = X + N` with
//! `S_N = S_Z / |C|^2`, and the feedback predictor sees the true past
//! estimation error.

use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::{apply_fir, realize_filter_pair, zero_phase_response, DEFAULT_FIR_TAPS};
use crate::num::{mean, nats_to_bits, Real};
use crate::prediction::{levinson, PredictorCoeffs, DEFAULT_PREDICTOR_ORDER};
use crate::spectra::{fir_mag2, PowerSpectrum};
use crate::stats::{psd_deviation, sample_corr, DEFAULT_SEGMENT, DEFAULT_SMOOTHING};
use crate::testchannel::{gaussian_sequence, stream_rng, synthesize_with, Stream};

/// Smallest admissible `|C(f)|` on the grid.
pub const SINGULAR_LIMIT: f64 = 1e-9;

/// Lags `0..=ORTHOGONALITY_LAGS` checked for slicer-error orthogonality.
pub const ORTHOGONALITY_LAGS: usize = 5;

/// Linear Gaussian channel `Y = c * X + Z` with input power limit `power`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelModel<T> {
    pub isi_taps: Vec<T>,
    pub noise: PowerSpectrum<T>,
    pub power: T,
}

impl<T: Real> ChannelModel<T> {
    pub fn new(isi_taps: Vec<T>, noise: PowerSpectrum<T>, power: T) -> Result<Self> {
        let model = Self { isi_taps, noise, power };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.isi_taps.is_empty() || self.isi_taps.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("channel taps must be finite and non-empty".into()));
        }
        if !(self.power > T::zero()) || !self.power.is_finite() {
            return Err(Error::Domain {
                name: "power",
                value: self.power.as_f64(),
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }
}

/// Noise spectrum after zero forcing, `S_Z / |C|^2`.
pub fn equivalent_noise<T: Real>(channel: &ChannelModel<T>) -> Result<PowerSpectrum<T>> {
    channel.validate()?;
    let g = channel.noise.grid_size();
    let limit = T::lit(SINGULAR_LIMIT);
    let mut values = Vec::with_capacity(g);
    for (i, &s) in channel.noise.values().iter().enumerate() {
        let c2 = fir_mag2(&channel.isi_taps, i, g);
        if !(c2.sqrt() >= limit) {
            return Err(Error::SingularChannel {
                frequency: channel.noise.frequency(i).as_f64(),
                magnitude: c2.sqrt().as_f64(),
            });
        }
        values.push(s / c2);
    }
    PowerSpectrum::tabulated(values)
}

/// Inverts the channel on a fully received linear convolution `c * x`,
/// returning `x`.
pub fn zero_force<T: Real>(isi_taps: &[T], received: &[T]) -> Result<Vec<T>> {
    if isi_taps.is_empty() || received.len() < isi_taps.len() {
        return Err(Error::SignalTooShort { len: received.len(), needed: isi_taps.len().max(1) - 1 });
    }
    let m = received.len().next_power_of_two();
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(m);
    let pad = |s: &[T]| {
        let mut b: Vec<Complex<T>> = s.iter().map(|&v| Complex::new(v, T::zero())).collect();
        b.resize(m, Complex::new(T::zero(), T::zero()));
        b
    };
    let mut y = pad(received);
    let mut c = pad(isi_taps);
    fwd.process(&mut y);
    fwd.process(&mut c);
    for (k, (yk, ck)) in y.iter_mut().zip(&c).enumerate() {
        if !(ck.norm() >= T::lit(SINGULAR_LIMIT)) {
            return Err(Error::SingularChannel {
                frequency: k as f64 / m as f64,
                magnitude: ck.norm().as_f64(),
            });
        }
        *yk /= *ck;
    }
    planner.plan_fft_inverse(m).process(&mut y);
    let mf = T::from_count(m);
    Ok(y[..received.len() + 1 - isi_taps.len()].iter().map(|v| v.re / mf).collect())
}

/// Capacity-achieving Gaussian input for the equivalent channel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelWaterFill<T> {
    pub theta: T,
    /// Input spectrum `[theta - S_N]^+`.
    pub input_spectrum: Vec<T>,
    /// Shaping filter `|H1|^2 = [theta - S_N]^+ / theta`.
    pub shaping_mag2: Vec<T>,
    pub capacity_nats: T,
    /// `theta >= max S_N`: every frequency carries power.
    pub full_band: bool,
}

impl<T: Real> ChannelWaterFill<T> {
    pub fn capacity_bits(&self) -> T {
        nats_to_bits(self.capacity_nats)
    }
}

/// Solves `int [theta - S_N]^+ df = power` by bisection.
pub fn channel_waterfill<T: Real>(noise: &PowerSpectrum<T>, power: T) -> Result<ChannelWaterFill<T>> {
    if !(power > T::zero()) {
        return Err(Error::Domain { name: "power", value: power.as_f64(), min: 0.0, max: f64::INFINITY });
    }
    let s = noise.values();
    let loading = |theta: T| mean(&s.iter().map(|&n| (theta - n).max(T::zero())).collect::<Vec<_>>());
    let (s_min, s_max) = noise.extrema();
    let theta = if loading(s_max) <= power {
        // water above every noise level: closed form
        power + noise.variance()
    } else {
        let (mut lo, mut hi) = (s_min, s_max);
        let tol = T::lit(1e-12) * power;
        let mut mid = (lo + hi) * T::lit(0.5);
        for _ in 0..400 {
            mid = (lo + hi) * T::lit(0.5);
            let resid = loading(mid) - power;
            if resid.abs() < tol || hi - lo <= T::epsilon() * hi {
                break;
            }
            if resid > T::zero() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        mid
    };
    let input_spectrum: Vec<T> = s.iter().map(|&n| (theta - n).max(T::zero())).collect();
    let shaping_mag2 = input_spectrum.iter().map(|&x| x / theta).collect();
    let capacity_nats = mean(
        &s.iter()
            .map(|&n| if theta > n { T::lit(0.5) * (theta / n).ln() } else { T::zero() })
            .collect::<Vec<_>>(),
    );
    Ok(ChannelWaterFill { theta, input_spectrum, shaping_mag2, capacity_nats, full_band: theta >= s_max })
}

/// `exp(int log(1 + S_X / S_N) df)`, the ideal MMSE-DFE slicer SNR.
pub fn slicer_snr_theory<T: Real>(input: &[T], noise: &[T]) -> Result<T> {
    if input.len() != noise.len() {
        return Err(Error::LengthMismatch { left: input.len(), right: noise.len() });
    }
    let logs: Vec<T> = input.iter().zip(noise).map(|(&x, &n)| (T::one() + x / n).ln()).collect();
    Ok(mean(&logs).exp())
}

/// Parameters of one equalizer simulation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DfeConfig<T> {
    pub channel: ChannelModel<T>,
    pub samples: usize,
    pub seed: u64,
    pub predictor_order: usize,
    pub fir_taps: usize,
    /// Samples skipped from all statistics; `4 max(L, T)` when unset.
    pub burn_in: Option<usize>,
    pub record_traces: bool,
}

impl<T: Real> DfeConfig<T> {
    pub fn new(channel: ChannelModel<T>, samples: usize, seed: u64) -> Self {
        Self {
            channel,
            samples,
            seed,
            predictor_order: DEFAULT_PREDICTOR_ORDER,
            fir_taps: DEFAULT_FIR_TAPS,
            burn_in: None,
            record_traces: false,
        }
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(4 * self.predictor_order.max(self.fir_taps))
    }

    /// Samples clear of the predictor warm-up and both filter edges.
    pub fn window(&self) -> Range<usize> {
        self.effective_burn_in()..self.samples.saturating_sub(2 * self.fir_taps)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.predictor_order == 0 {
            return Err(Error::InvalidParameter("predictor order must be at least 1".into()));
        }
        let w = self.window();
        if w.end <= w.start + 100 * ORTHOGONALITY_LAGS {
            return Err(Error::SignalTooShort { len: self.samples, needed: w.start + 2 * self.fir_taps });
        }
        Ok(())
    }
}

/// Signals of one equalizer run.
#[derive(Clone, Debug, PartialEq)]
pub struct DfeTraces<T> {
    /// Transmitted symbols.
    pub u: Vec<T>,
    /// Shaped channel input.
    pub x: Vec<T>,
    /// Equivalent-channel output.
    pub y: Vec<T>,
    /// Feedforward (matched) filter output.
    pub u_hat: Vec<T>,
    /// Estimation error `U - U_hat`.
    pub d: Vec<T>,
    /// Prediction of `d` from its past.
    pub d_hat: Vec<T>,
    /// Slicer error `d - d_hat`.
    pub e: Vec<T>,
    /// Slicer input `U_hat + d_hat`.
    pub v: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DfeSolution<T> {
    pub equivalent_noise: Vec<T>,
    pub waterfill: ChannelWaterFill<T>,
    /// Symbol variance, set to the water level.
    pub sigma_u2: T,
    pub predictor: PredictorCoeffs<T>,
    /// `exp(int log min(S_N, theta) df)`.
    pub error_entropy_power: T,
    pub slicer_error_variance: T,
    pub slicer_snr_theory: T,
    pub slicer_snr_measured: T,
    /// `1/2 log2(sigma_U^2 / sigma_E^2)`.
    pub scalar_mi_bits: T,
    pub capacity_bits: T,
    /// `1/2 log2((P + var N) / Pe(N))`; equals capacity when the water covers the band.
    pub shannon_upper_bound_bits: T,
    pub input_power: T,
    /// Correlation of `E_n` with `V_{n-k}`, `k = 0..=5`.
    pub error_past_corr: Vec<T>,
    /// Correlation of `E_n` with `V_{n+1}`.
    pub error_future_corr: T,
    pub window: Range<usize>,
    #[serde(skip)]
    pub traces: Option<DfeTraces<T>>,
}

impl<T> DfeSolution<T> {
    pub fn traces(&self) -> Result<&DfeTraces<T>> {
        self.traces.as_ref().ok_or(Error::TracesAbsent)
    }
}

/// Simulates the noise-prediction MMSE-DFE with genie-aided feedback.
pub fn dfe_simulate<T: Real>(config: &DfeConfig<T>) -> Result<DfeSolution<T>> {
    config.validate()?;
    let s_n = equivalent_noise(&config.channel)?;
    let g = s_n.grid_size();
    let wf = channel_waterfill(&s_n, config.channel.power)?;
    let theta = wf.theta;
    let filters = realize_filter_pair(&wf.shaping_mag2, config.fir_taps)?;
    let amp = zero_phase_response(&filters.pre_taps, g);
    // error spectrum of the realized filters: theta (1 - A^2)^2 + A^2 S_N
    let s_d = PowerSpectrum::tabulated(
        amp.iter()
            .zip(s_n.values())
            .map(|(&a, &n)| {
                let a2 = a * a;
                theta * (T::one() - a2) * (T::one() - a2) + a2 * n
            })
            .collect(),
    )?;
    let predictor = levinson(&s_d.autocorrelation(config.predictor_order)?)?;

    let n = config.samples;
    let u = gaussian_sequence(&mut stream_rng(config.seed, Stream::Source), n, theta.sqrt());
    let x = apply_fir(&filters.pre_taps, filters.delay, &u)?.samples;
    let noise = synthesize_with(&s_n, n, &mut stream_rng(config.seed, Stream::Noise));
    let y: Vec<T> = x.iter().zip(&noise).map(|(&a, &b)| a + b).collect();
    let u_hat = apply_fir(&filters.post_taps, filters.delay, &y)?.samples;
    let d: Vec<T> = u.iter().zip(&u_hat).map(|(&a, &b)| a - b).collect();
    let d_hat: Vec<T> = (0..n)
        .map(|t| predictor.coeffs.iter().enumerate().take(t).map(|(i, &a)| a * d[t - 1 - i]).sum())
        .collect();
    let e: Vec<T> = d.iter().zip(&d_hat).map(|(&a, &b)| a - b).collect();
    let v: Vec<T> = u_hat.iter().zip(&d_hat).map(|(&a, &b)| a + b).collect();

    let w = config.window();
    let ms = |s: &[T]| s.iter().map(|&a| a * a).sum::<T>() / T::from_count(s.len());
    let sigma_e2 = ms(&e[w.clone()]);
    let error_past_corr = (0..=ORTHOGONALITY_LAGS)
        .map(|k| sample_corr(&v[w.clone()], &e[w.clone()], k as isize))
        .collect::<Result<Vec<_>>>()?;
    let error_future_corr = sample_corr(&e[w.clone()], &v[w.clone()], 1)?;
    let clipped = s_n.map_values(|s| s.min(theta))?;
    let error_entropy_power = clipped.entropy_power()?;
    let half = T::lit(0.5);
    let sub = half * ((config.channel.power + s_n.variance()) / s_n.entropy_power()?).ln();
    let solution = DfeSolution {
        equivalent_noise: s_n.values().to_vec(),
        sigma_u2: theta,
        predictor,
        error_entropy_power,
        slicer_error_variance: sigma_e2,
        slicer_snr_theory: slicer_snr_theory(&wf.input_spectrum, s_n.values())?,
        slicer_snr_measured: theta / sigma_e2,
        scalar_mi_bits: nats_to_bits(half * (theta / sigma_e2).ln()),
        capacity_bits: wf.capacity_bits(),
        shannon_upper_bound_bits: nats_to_bits(sub),
        input_power: ms(&x[w.clone()]),
        error_past_corr,
        error_future_corr,
        waterfill: wf,
        window: w,
        traces: None,
    };
    Ok(if config.record_traces {
        DfeSolution { traces: Some(DfeTraces { u, x, y, u_hat, d, d_hat, e, v }), ..solution }
    } else {
        solution
    })
}

/// Largest relative deviation of the smoothed periodogram of the estimation
/// error from `min(S_N, theta)`; `None` when no power is transmitted.
pub fn backward_spectrum_check<T: Real>(solution: &DfeSolution<T>) -> Result<Option<T>> {
    let traces = solution.traces()?;
    if solution.waterfill.input_spectrum.iter().all(|&x| x <= T::zero()) {
        return Ok(None);
    }
    let theta = solution.waterfill.theta;
    let reference = PowerSpectrum::tabulated(solution.equivalent_noise.iter().map(|&s| s.min(theta)).collect())?;
    let d = &traces.d[solution.window.clone()];
    psd_deviation(d, &reference, DEFAULT_SEGMENT, DEFAULT_SMOOTHING).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::design_prefilter_mag2;

    const G: usize = 4096;

    fn white(s: f64) -> PowerSpectrum<f64> {
        PowerSpectrum::<f64>::white(s, G).unwrap()
    }

    #[test]
    fn equivalent_noise_examples() {
        let flat = equivalent_noise(&ChannelModel::new(vec![1.0], white(1.0), 1.0).unwrap()).unwrap();
        assert!(flat.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let gain = equivalent_noise(&ChannelModel::new(vec![2f64.sqrt()], white(1.0), 1.0).unwrap()).unwrap();
        assert!(gain.values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let isi = equivalent_noise(&ChannelModel::new(vec![1.0, 0.5], white(1.0), 1.0).unwrap()).unwrap();
        for (i, &v) in isi.values().iter().enumerate() {
            let f = isi.frequency(i);
            let oracle = 1.0 / (1.25 + (std::f64::consts::TAU * f).cos());
            assert!((v - oracle).abs() < 1e-12 * oracle);
        }
    }

    #[test]
    fn singular_channel_is_rejected() {
        // [1, 0, 1] vanishes at f = +-1/4, which a two-point grid samples
        let ch = ChannelModel::new(vec![1.0, 0.0, 1.0], PowerSpectrum::<f64>::white(1.0, 2).unwrap(), 1.0).unwrap();
        assert!(matches!(equivalent_noise(&ch), Err(Error::SingularChannel { .. })));
        assert!(ChannelModel::new(vec![1.0], white(1.0), 0.0).is_err());
    }

    #[test]
    fn waterfill_examples() {
        let wf = channel_waterfill(&white(1.0), 3.0).unwrap();
        assert!((wf.theta - 4.0).abs() < 1e-12);
        assert!((wf.capacity_bits() - 1.0).abs() < 1e-12);
        assert!(wf.shaping_mag2.iter().all(|&h| (h - 0.75).abs() < 1e-12));
        assert!(wf.full_band);

        let tiny = channel_waterfill(&white(1.0), 1e-9).unwrap();
        assert!(tiny.capacity_bits() < 1e-8);

        let two_band = PowerSpectrum::<f64>::from_fn(G, |f| if f.abs() < 0.25 { 1.0 } else { 4.0 }).unwrap();
        let wf = channel_waterfill(&two_band, 0.5).unwrap();
        assert!((wf.theta - 2.0).abs() < 1e-9);
        assert!((wf.capacity_bits() - 0.25).abs() < 1e-9);
        assert!(!wf.full_band);
        // the water just reaches the upper band
        let wf = channel_waterfill(&two_band, 1.5).unwrap();
        assert!((wf.theta - 4.0).abs() < 1e-9);
        assert!((wf.capacity_bits() - 0.5).abs() < 1e-9);
        assert!(channel_waterfill(&white(1.0), -1.0).is_err());
    }

    #[test]
    fn slicer_snr_examples() {
        assert!((slicer_snr_theory::<f64>(&[3.0; 8], &[1.0; 8]).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(slicer_snr_theory::<f64>(&[0.0; 8], &[1.0; 8]).unwrap(), 1.0);
        let two_band = PowerSpectrum::<f64>::from_fn(G, |f| if f.abs() < 0.25 { 1.0 } else { 4.0 }).unwrap();
        let wf = channel_waterfill(&two_band, 0.5).unwrap();
        let snr = slicer_snr_theory(&wf.input_spectrum, two_band.values()).unwrap();
        assert!((snr - 2f64.powf(2.0 * wf.capacity_bits())).abs() < 1e-9);
        assert!((snr - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn shaping_filter_is_dual_of_source_prefilter() {
        let noise = PowerSpectrum::<f64>::ar(vec![0.6], 1.0, G).unwrap();
        for power in [0.5, 2.0, 20.0] {
            let wf = channel_waterfill(&noise, power).unwrap();
            let theta = wf.theta;
            let source = noise.map_values(|s| theta * theta / s).unwrap();
            let pre = design_prefilter_mag2(&source, theta);
            for (a, b) in pre.iter().zip(&wf.shaping_mag2) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_forcing_round_trip() {
        let taps = [1.0, 0.5, -0.2];
        let x = gaussian_sequence::<f64>(&mut stream_rng(3, Stream::Source), 5000, 1.0);
        let mut y = vec![0.0; x.len() + taps.len() - 1];
        for (i, &xi) in x.iter().enumerate() {
            for (k, &c) in taps.iter().enumerate() {
                y[i + k] += c * xi;
            }
        }
        let back = zero_force(&taps, &y).unwrap();
        assert_eq!(back.len(), x.len());
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(zero_force(&[1.0, 1.0], &[1.0, 0.0, -1.0, 0.0]).is_err());
    }

    fn run(channel: ChannelModel<f64>, seed: u64) -> DfeSolution<f64> {
        let mut cfg = DfeConfig::new(channel, 1_000_000, seed);
        cfg.record_traces = true;
        dfe_simulate(&cfg).unwrap()
    }

    #[test]
    fn flat_channel_reaches_capacity() {
        let sol = run(ChannelModel::new(vec![1.0], white(1.0), 3.0).unwrap(), 7);
        assert!((sol.slicer_error_variance - 1.0).abs() < 0.02);
        assert!((sol.scalar_mi_bits - 1.0).abs() < 0.02);
        assert!((sol.capacity_bits - 1.0).abs() < 1e-12);
        assert!((sol.input_power / 3.0 - 1.0).abs() < 0.01);
        assert!(backward_spectrum_check(&sol).unwrap().unwrap() < 0.05);
        let bound = 3.0 / 1e3;
        assert!(sol.error_past_corr.iter().all(|c| c.abs() < bound), "{:?}", sol.error_past_corr);
    }

    #[test]
    fn isi_channel_meets_shannon_upper_bound() {
        let sol = run(ChannelModel::new(vec![1.0, 0.5], white(1.0), 4.0).unwrap(), 7);
        assert!(sol.waterfill.full_band);
        assert!((sol.waterfill.theta - 16.0 / 3.0).abs() < 1e-9);
        assert!((sol.error_entropy_power - 1.0).abs() < 1e-9);
        assert!((sol.capacity_bits - sol.shannon_upper_bound_bits).abs() < 1e-9);
        assert!((sol.capacity_bits - 0.5 * (16f64 / 3.0).log2()).abs() < 1e-9);
        assert!((sol.slicer_error_variance / sol.error_entropy_power - 1.0).abs() < 0.03);
        assert!((sol.scalar_mi_bits - sol.capacity_bits).abs() < 0.03);
        assert!((sol.input_power / 4.0 - 1.0).abs() < 0.01);
        let bound = 3.0 / 1e3;
        assert!(sol.error_past_corr.iter().all(|c| c.abs() < bound), "{:?}", sol.error_past_corr);
        assert!(sol.error_future_corr.abs() > 10.0 * bound);
        assert!(backward_spectrum_check(&sol).unwrap().unwrap() < 0.05);
    }

    #[test]
    fn high_snr_error_tracks_noise() {
        let noise = PowerSpectrum::<f64>::ar(vec![0.9], 1.0, G).unwrap();
        let power = 100.0 * noise.variance();
        let sol = run(ChannelModel::new(vec![1.0], noise.clone(), power).unwrap(), 11);
        assert!((sol.slicer_error_variance / noise.entropy_power().unwrap() - 1.0).abs() < 0.03);
        assert!((sol.scalar_mi_bits - sol.capacity_bits).abs() < 0.03);
        assert!(backward_spectrum_check(&sol).unwrap().unwrap() < 0.05);
    }

    #[test]
    fn clipped_band_shows_in_error_spectrum() {
        let noise = PowerSpectrum::<f64>::ar(vec![0.6], 1.0, G).unwrap();
        let sol = run(ChannelModel::new(vec![1.0], noise, 1.0).unwrap(), 5);
        assert!(!sol.waterfill.full_band);
        assert!((sol.scalar_mi_bits - sol.capacity_bits).abs() < 0.03);
        assert!(backward_spectrum_check(&sol).unwrap().unwrap() < 0.05);
    }

    #[test]
    fn traces_must_be_recorded_for_spectrum_check() {
        let mut cfg = DfeConfig::new(ChannelModel::new(vec![1.0], white(1.0), 3.0).unwrap(), 20_000, 1);
        cfg.fir_taps = 33;
        let sol = dfe_simulate(&cfg).unwrap();
        assert_eq!(backward_spectrum_check(&sol), Err(Error::TracesAbsent));
    }
}
