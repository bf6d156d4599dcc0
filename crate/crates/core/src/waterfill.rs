//! Reverse water-filling for the quadratic-Gaussian rate-distortion function.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::{nats_to_bits, Real};
use crate::spectra::PowerSpectrum;

const MAX_BISECTIONS: usize = 400;

/// Water-filling solution for one distortion level. Rates are in nats.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WaterFillSolution<T> {
    pub theta: T,
    pub rate_nats: T,
    pub distortion_total: T,
    /// `min(theta, S(f_i))` on the grid.
    pub distortion_spectrum: Vec<T>,
    /// `D <= S_min`: the Shannon lower bound is attained.
    pub slb_tight: bool,
}

impl<T: Real> WaterFillSolution<T> {
    pub fn rate_bits(&self) -> T {
        nats_to_bits(self.rate_nats)
    }
}

/// `int min(theta, S) df`.
fn distortion_at<T: Real>(values: &[T], theta: T) -> T {
    values.iter().map(|&s| s.min(theta)).sum::<T>() / T::from_count(values.len())
}

/// Water level `theta` with `int min(theta, S) df = D`, by bisection.
///
/// At `D = variance` the smallest admissible level, `S_max`, is returned.
pub fn water_level_for_distortion<T: Real>(spec: &PowerSpectrum<T>, d: T) -> Result<T> {
    let var = spec.variance();
    let (s_min, s_max) = spec.extrema();
    // accept D a hair above the quadrature variance as the full-distortion point
    let slack = var * T::lit(1e-12);
    if !(d > T::zero() && d <= var + slack) {
        return Err(Error::Domain {
            name: "D",
            value: d.as_f64(),
            min: 0.0,
            max: var.as_f64(),
        });
    }
    if d >= var {
        return Ok(s_max);
    }
    if d <= s_min {
        return Ok(d);
    }
    let values = spec.values();
    let target_resid = T::lit(1e-12) * d;
    let (mut lo, mut hi) = (T::zero(), s_max);
    let mut mid = d;
    for _ in 0..MAX_BISECTIONS {
        mid = (lo + hi) / T::lit(2.0);
        let resid = distortion_at(values, mid) - d;
        if resid.abs() < target_resid {
            break;
        }
        if resid > T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    Ok(mid)
}

/// `R(D) = int_{S > theta} 1/2 log(S/theta) df` with its full solution record.
pub fn rdf<T: Real>(spec: &PowerSpectrum<T>, d: T) -> Result<WaterFillSolution<T>> {
    let theta = water_level_for_distortion(spec, d)?;
    Ok(solution_for_level(spec, theta))
}

/// Solution record for a given water level.
pub fn solution_for_level<T: Real>(spec: &PowerSpectrum<T>, theta: T) -> WaterFillSolution<T> {
    let values = spec.values();
    let g = T::from_count(values.len());
    let half = T::lit(0.5);
    let rate_nats = values
        .iter()
        .filter(|&&s| s > theta)
        .map(|&s| half * (s / theta).ln())
        .sum::<T>()
        / g;
    let distortion_spectrum: Vec<T> = values.iter().map(|&s| s.min(theta)).collect();
    let distortion_total = distortion_spectrum.iter().copied().sum::<T>() / g;
    let (s_min, _) = spec.extrema();
    WaterFillSolution {
        theta,
        rate_nats,
        slb_tight: distortion_total <= s_min,
        distortion_total,
        distortion_spectrum,
    }
}

/// Shannon lower bound `max(0, 1/2 log(Pe/D))` in nats.
pub fn slb<T: Real>(spec: &PowerSpectrum<T>, d: T) -> Result<T> {
    if !(d > T::zero()) {
        return Err(Error::Domain {
            name: "D",
            value: d.as_f64(),
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    let pe = spec.entropy_power()?;
    Ok((T::lit(0.5) * (pe / d).ln()).max(T::zero()))
}

/// DPCM versus open-loop (D*PCM) prediction gains.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionGains<T> {
    /// `sigma_X^2 / Pe(X)`.
    pub dpcm: T,
    /// `sigma_X^2 / (int sqrt(S) df)^2`.
    pub dstar_pcm: T,
    /// `(int sqrt(S) df)^2 / Pe(X)`.
    pub ratio: T,
    /// The same ratio as `(sigma_U^2 / Pe(U))^2` for the half-whitened
    /// process `U` with spectrum `sqrt(S)`.
    pub ratio_half_whitened: T,
}

pub fn prediction_gains<T: Real>(spec: &PowerSpectrum<T>) -> Result<PredictionGains<T>> {
    let pe = spec.entropy_power()?;
    if !(pe > T::zero()) {
        return Err(Error::DegenerateSpectrum("entropy power is zero".into()));
    }
    let var = spec.variance();
    let root_mean = spec.values().iter().map(|s| s.sqrt()).sum::<T>() / T::from_count(spec.grid_size());
    let half_whitened = spec.map_values(|s| s.sqrt())?;
    let u_ratio = half_whitened.variance() / half_whitened.entropy_power()?;
    Ok(PredictionGains {
        dpcm: var / pe,
        dstar_pcm: var / (root_mean * root_mean),
        ratio: root_mean * root_mean / pe,
        ratio_half_whitened: u_ratio * u_ratio,
    })
}
