//! Power spectral densities on a uniform frequency grid.
//!
//! Every spectrum is sampled on `G` cell midpoints
//! `f_i = (i + 1/2)/G - 1/2`, `i = 0..G`, which tile `[-1/2, 1/2)`
//! symmetrically (`f_{G-1-i} = -f_i`). All spectral integrals in the crate
//! are midpoint sums over this grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Default number of grid points.
pub const DEFAULT_GRID_SIZE: usize = 4096;

/// Spectrum values at or below this level count as zeros in log-integrals.
const ZERO_LEVEL: f64 = 1e-300;

/// Fraction of zero grid points above which the entropy power is reported as 0.
const ZERO_MASS_LIMIT: f64 = 0.01;

/// How a spectrum was specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpectrumKind<T> {
    /// Flat spectrum of level `sigma2`.
    White { sigma2: T },
    /// `sigma_w2 / |1 - sum_i a_i e^{-j 2 pi f i}|^2`.
    Ar { a: Vec<T>, sigma_w2: T },
    /// `|sum_k b_k e^{-j 2 pi f k}|^2` (unit-variance driving noise).
    Ma { taps: Vec<T> },
    /// Explicit values on the grid.
    Tabulated { values: Vec<T> },
}

/// Frequency of grid point `i` on a grid of `grid_size` points.
#[inline]
pub fn grid_frequency<T: Real>(i: usize, grid_size: usize) -> T {
    T::from_f64((2 * i + 1) as f64 - grid_size as f64).unwrap() / T::from_count(2 * grid_size)
}

/// `2 pi f_i k`, reduced modulo `2 pi` in integer arithmetic before scaling.
#[inline]
pub(crate) fn grid_phase<T: Real>(i: usize, k: i64, grid_size: usize) -> T {
    let period = 2 * grid_size as i64;
    let num = ((2 * i as i64 + 1 - grid_size as i64) * k).rem_euclid(period);
    T::TAU() * T::from_i64(num).unwrap() / T::from_i64(period).unwrap()
}

/// A nonnegative, even power spectrum sampled on the frequency grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerSpectrum<T> {
    kind: SpectrumKind<T>,
    #[serde(skip)]
    grid: Vec<T>,
}

impl<T: Real> PowerSpectrum<T> {
    /// Builds and validates a spectrum of the given kind. Tabulated kinds
    /// take their grid size from the value count and ignore `grid_size`.
    pub fn new(kind: SpectrumKind<T>, grid_size: usize) -> Result<Self> {
        match kind {
            SpectrumKind::White { sigma2 } => Self::white(sigma2, grid_size),
            SpectrumKind::Ar { a, sigma_w2 } => Self::ar(a, sigma_w2, grid_size),
            SpectrumKind::Ma { taps } => Self::ma(taps, grid_size),
            SpectrumKind::Tabulated { values } => Self::tabulated(values),
        }
    }

    pub fn white(sigma2: T, grid_size: usize) -> Result<Self> {
        check_grid_size(grid_size)?;
        if !(sigma2.is_finite() && sigma2 >= T::zero()) {
            return Err(Error::InvalidSpectrum(format!("white level {sigma2} must be finite and >= 0")));
        }
        Ok(Self {
            kind: SpectrumKind::White { sigma2 },
            grid: vec![sigma2; grid_size],
        })
    }

    /// Autoregressive spectrum; rejects polynomials with roots on or outside
    /// the unit circle.
    pub fn ar(a: Vec<T>, sigma_w2: T, grid_size: usize) -> Result<Self> {
        check_grid_size(grid_size)?;
        if !(sigma_w2.is_finite() && sigma_w2 > T::zero()) {
            return Err(Error::InvalidSpectrum(format!("innovation variance {sigma_w2} must be > 0")));
        }
        if a.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpectrum("non-finite AR coefficient".into()));
        }
        check_ar_stable(&a)?;
        let grid = mirrored(grid_size, |i| {
            let (mut re, mut im) = (T::one(), T::zero());
            for (k, &c) in a.iter().enumerate() {
                let ph = grid_phase::<T>(i, k as i64 + 1, grid_size);
                re -= c * ph.cos();
                im += c * ph.sin();
            }
            sigma_w2 / (re * re + im * im)
        });
        Ok(Self {
            kind: SpectrumKind::Ar { a, sigma_w2 },
            grid,
        })
    }

    pub fn ma(taps: Vec<T>, grid_size: usize) -> Result<Self> {
        check_grid_size(grid_size)?;
        if taps.is_empty() || taps.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpectrum("MA taps must be non-empty and finite".into()));
        }
        let grid = mirrored(grid_size, |i| fir_mag2(&taps, i, grid_size));
        Ok(Self {
            kind: SpectrumKind::Ma { taps },
            grid,
        })
    }

    /// Spectrum given directly by its grid values.
    pub fn tabulated(values: Vec<T>) -> Result<Self> {
        let g = values.len();
        check_grid_size(g)?;
        let mut peak = T::zero();
        for &v in &values {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(Error::InvalidSpectrum(format!("value {v} is negative or non-finite")));
            }
            peak = peak.max(v);
        }
        let tol = T::lit(1e-9) * peak.max(T::one()) + T::epsilon() * T::lit(8.0) * peak;
        for i in 0..g / 2 {
            if (values[i] - values[g - 1 - i]).abs() > tol {
                return Err(Error::InvalidSpectrum(format!(
                    "not even: S({}) = {} but S({}) = {}",
                    grid_frequency::<T>(i, g),
                    values[i],
                    grid_frequency::<T>(g - 1 - i, g),
                    values[g - 1 - i]
                )));
            }
        }
        Ok(Self {
            grid: values.clone(),
            kind: SpectrumKind::Tabulated { values },
        })
    }

    /// Tabulates `f -> value` on the grid.
    pub fn from_fn(grid_size: usize, mut value: impl FnMut(T) -> T) -> Result<Self> {
        check_grid_size(grid_size)?;
        Self::tabulated((0..grid_size).map(|i| value(grid_frequency(i, grid_size))).collect())
    }

    /// Pointwise transform of the grid values into a new tabulated spectrum.
    pub fn map_values(&self, mut op: impl FnMut(T) -> T) -> Result<Self> {
        Self::tabulated(self.grid.iter().map(|&s| op(s)).collect())
    }

    pub fn kind(&self) -> &SpectrumKind<T> {
        &self.kind
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    /// Grid values `S(f_i)`.
    pub fn values(&self) -> &[T] {
        &self.grid
    }

    pub fn frequency(&self, i: usize) -> T {
        grid_frequency(i, self.grid.len())
    }

    /// `S(e^{j 2 pi f})`. Parametric kinds are evaluated exactly; tabulated
    /// spectra return the value of the grid cell containing `f`.
    pub fn eval(&self, f: T) -> Result<T> {
        let half = T::lit(0.5);
        if !(f >= -half && f < half) {
            return Err(Error::Domain {
                name: "f",
                value: f.as_f64(),
                min: -0.5,
                max: 0.5,
            });
        }
        let w = T::TAU() * f;
        Ok(match &self.kind {
            SpectrumKind::White { sigma2 } => *sigma2,
            SpectrumKind::Ar { a, sigma_w2 } => {
                let (mut re, mut im) = (T::one(), T::zero());
                for (k, &c) in a.iter().enumerate() {
                    let ph = w * T::from_count(k + 1);
                    re -= c * ph.cos();
                    im += c * ph.sin();
                }
                *sigma_w2 / (re * re + im * im)
            }
            SpectrumKind::Ma { taps } => {
                let (mut re, mut im) = (T::zero(), T::zero());
                for (k, &c) in taps.iter().enumerate() {
                    let ph = w * T::from_count(k);
                    re += c * ph.cos();
                    im -= c * ph.sin();
                }
                re * re + im * im
            }
            SpectrumKind::Tabulated { values } => values[self.cell_of(f)],
        })
    }

    /// Index of the grid cell containing `f` (with `f` wrapped into `[-1/2, 1/2)`).
    pub fn cell_of(&self, f: T) -> usize {
        let g = self.grid.len();
        let wrapped = f - (f + T::lit(0.5)).floor();
        let idx = ((wrapped + T::lit(0.5)) * T::from_count(g)).floor();
        idx.to_usize().unwrap_or(0).min(g - 1)
    }

    /// `r[k] = int S(f) cos(2 pi f k) df` for `k = 0..=max_lag`.
    pub fn autocorrelation(&self, max_lag: usize) -> Result<Vec<T>> {
        let g = self.grid.len();
        if 2 * max_lag >= g {
            return Err(Error::Resolution { max_lag, grid_size: g });
        }
        let scale = T::from_count(g);
        Ok((0..=max_lag)
            .map(|k| {
                self.grid
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| s * grid_phase::<T>(i, k as i64, g).cos())
                    .sum::<T>()
                    / scale
            })
            .collect())
    }

    /// `int S(f) df`.
    pub fn variance(&self) -> T {
        crate::num::mean(&self.grid)
    }

    /// `(min_i S(f_i), max_i S(f_i))`.
    pub fn extrema(&self) -> (T, T) {
        self.grid
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &s| (lo.min(s), hi.max(s)))
    }

    /// `exp(int log S(f) df)`.
    ///
    /// Grid points with `S <= 1e-300` are left out of the average. If they
    /// make up more than 1% of the grid the entropy power is 0.
    pub fn entropy_power(&self) -> Result<T> {
        let zero = T::lit(ZERO_LEVEL).max(T::min_positive_value());
        let (mut acc, mut count) = (T::zero(), 0usize);
        for &s in &self.grid {
            if s > zero {
                acc += s.ln();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::DegenerateSpectrum("spectrum is identically zero".into()));
        }
        let excluded = self.grid.len() - count;
        if excluded as f64 > ZERO_MASS_LIMIT * self.grid.len() as f64 {
            return Ok(T::zero());
        }
        Ok((acc / T::from_count(count)).exp())
    }
}

impl<T: Real> TryFrom<(SpectrumKind<T>, usize)> for PowerSpectrum<T> {
    type Error = Error;
    fn try_from((kind, grid_size): (SpectrumKind<T>, usize)) -> Result<Self> {
        Self::new(kind, grid_size)
    }
}

/// `|sum_k h_k e^{-j 2 pi f_i k}|^2` at grid point `i`.
pub(crate) fn fir_mag2<T: Real>(taps: &[T], i: usize, grid_size: usize) -> T {
    let (mut re, mut im) = (T::zero(), T::zero());
    for (k, &c) in taps.iter().enumerate() {
        let ph = grid_phase::<T>(i, k as i64, grid_size);
        re += c * ph.cos();
        im -= c * ph.sin();
    }
    re * re + im * im
}

/// Evaluates the negative-frequency half and mirrors it, so the grid is exactly even.
fn mirrored<T: Real>(grid_size: usize, value: impl Fn(usize) -> T) -> Vec<T> {
    let half: Vec<T> = (0..grid_size / 2).map(value).collect();
    half.iter().chain(half.iter().rev()).copied().collect()
}

fn check_grid_size(g: usize) -> Result<()> {
    if g < 2 || !g.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "grid size {g} must be a power of two >= 2"
        )));
    }
    Ok(())
}

/// Schur-Cohn step-down: `1 - sum a_i z^{-i}` is minimum phase iff every
/// reflection coefficient has magnitude below one.
fn check_ar_stable<T: Real>(a: &[T]) -> Result<()> {
    let mut cur: Vec<T> = a.to_vec();
    while let Some(&k) = cur.last() {
        if k.abs() >= T::one() {
            return Err(Error::InvalidSpectrum(format!(
                "AR polynomial not stable (reflection coefficient {k} at order {})",
                cur.len()
            )));
        }
        let m = cur.len();
        let denom = T::one() - k * k;
        let next: Vec<T> = (0..m - 1).map(|i| (cur[i] + k * cur[m - 2 - i]) / denom).collect();
        cur = next;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: usize = 4096;

    fn ar1() -> PowerSpectrum<f64> {
        PowerSpectrum::<f64>::ar(vec![0.9], 1.0, G).unwrap()
    }

    fn two_band() -> PowerSpectrum<f64> {
        PowerSpectrum::<f64>::from_fn(G, |f: f64| if f.abs() < 0.25 { 4.0 } else { 1.0 }).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn grid_is_symmetric() {
        for i in 0..G {
            let f: f64 = grid_frequency(i, G);
            let g: f64 = grid_frequency(G - 1 - i, G);
            assert_eq!(f, -g);
        }
        let ar = ar1();
        for i in 0..G / 2 {
            assert_eq!(ar.values()[i], ar.values()[G - 1 - i]);
        }
    }

    #[test]
    fn eval_examples() {
        let white = PowerSpectrum::<f64>::white(1.0, G).unwrap();
        assert_eq!(white.eval(0.3).unwrap(), 1.0);
        let ar = ar1();
        assert!(rel(ar.eval(0.0).unwrap(), 100.0) < 1e-12);
        // 1 / (1 + 2*0.9 + 0.81)
        let at_half = 1.0 / 3.61;
        assert!(rel(ar.eval(-0.5).unwrap(), at_half) < 1e-12);
        assert!((ar.eval(-0.5).unwrap() - 0.27701).abs() < 1e-5);
        // last grid cell sits at -f of the first
        let near_edge = ar.values()[0];
        assert!(rel(near_edge, at_half) < 1e-6);
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let ar = ar1();
        assert!(matches!(ar.eval(0.5), Err(Error::Domain { .. })));
        assert!(matches!(ar.eval(-0.7), Err(Error::Domain { .. })));
    }

    #[test]
    fn unstable_ar_rejected() {
        assert!(matches!(
            PowerSpectrum::<f64>::ar(vec![1.1], 1.0, G),
            Err(Error::InvalidSpectrum(_))
        ));
        // roots 1.25 and 0.8 — product form (1 - 1.25 z^-1)(1 - 0.8 z^-1)
        assert!(PowerSpectrum::<f64>::ar(vec![2.05, -1.0], 1.0, G).is_err());
        // stable AR(2): (1 - 0.5 z^-1)(1 + 0.4 z^-1)
        assert!(PowerSpectrum::<f64>::ar(vec![0.1, 0.2], 1.0, G).is_ok());
    }

    #[test]
    fn tabulated_rejects_bad_values() {
        assert!(PowerSpectrum::<f64>::tabulated(vec![1.0, -1.0, -1.0, 1.0]).is_err());
        assert!(PowerSpectrum::<f64>::tabulated(vec![1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(PowerSpectrum::<f64>::tabulated(vec![1.0, 2.0, 2.0]).is_err());
        assert!(PowerSpectrum::<f64>::tabulated(vec![1.0, 2.0, 2.0, 1.0]).is_ok());
    }

    #[test]
    fn tabulated_eval_is_nearest_cell() {
        let s = PowerSpectrum::<f64>::tabulated(vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(s.eval(-0.5).unwrap(), 1.0);
        assert_eq!(s.eval(-0.2).unwrap(), 2.0);
        assert_eq!(s.eval(0.1).unwrap(), 2.0);
        assert_eq!(s.eval(0.49).unwrap(), 1.0);
    }

    #[test]
    fn autocorrelation_examples() {
        let white = PowerSpectrum::<f64>::white(1.0, G).unwrap();
        let r = white.autocorrelation(10).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-14);
        assert!(r[1..].iter().all(|x| x.abs() < 1e-13));

        // closed form sigma_w^2 a^k / (1 - a^2)
        let r = ar1().autocorrelation(30).unwrap();
        for (k, &rk) in r.iter().enumerate() {
            let exact = 0.9f64.powi(k as i32) / (1.0 - 0.81);
            assert!((rk - exact).abs() < 1e-6, "lag {k}: {rk} vs {exact}");
        }
        assert!((r[0] - 5.2632).abs() < 1e-4);

        let flat = PowerSpectrum::<f64>::tabulated(vec![2.0; 64]).unwrap();
        let r = flat.autocorrelation(5).unwrap();
        assert!((r[0] - 2.0).abs() < 1e-14);
        assert!(r[1..].iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn autocorrelation_resolution_error() {
        let s = PowerSpectrum::<f64>::white(1.0, 16).unwrap();
        assert!(s.autocorrelation(7).is_ok());
        assert!(matches!(
            s.autocorrelation(8),
            Err(Error::Resolution { max_lag: 8, grid_size: 16 })
        ));
    }

    #[test]
    fn entropy_power_examples() {
        let white = PowerSpectrum::<f64>::white(3.0, G).unwrap();
        assert!(rel(white.entropy_power().unwrap(), 3.0) < 1e-12);
        assert!(rel(ar1().entropy_power().unwrap(), 1.0) < 1e-12);
        assert!(rel(two_band().entropy_power().unwrap(), 2.0) < 1e-12);
    }

    #[test]
    fn entropy_power_zero_conventions() {
        let zero = PowerSpectrum::<f64>::white(0.0, 64).unwrap();
        assert!(matches!(zero.entropy_power(), Err(Error::DegenerateSpectrum(_))));

        // two zeros out of 1024 points (< 1%): excluded and the rest averaged
        let mut v = vec![2.0; 1024];
        v[0] = 0.0;
        v[1023] = 0.0;
        let s = PowerSpectrum::<f64>::tabulated(v).unwrap();
        assert!(rel(s.entropy_power().unwrap(), 2.0) < 1e-12);

        // a stop band over a quarter of the grid drives Pe to 0
        let s = PowerSpectrum::<f64>::from_fn(1024, |f: f64| if f.abs() < 0.125 { 0.0 } else { 1.0 }).unwrap();
        assert_eq!(s.entropy_power().unwrap(), 0.0);
    }

    #[test]
    fn variance_and_extrema() {
        let ar = ar1();
        assert!(rel(ar.variance(), 1.0 / 0.19) < 1e-10);
        let (lo, hi) = ar.extrema();
        // grid midpoints miss f = 0 and f = 1/2 by half a cell
        assert!(rel(lo, 1.0 / 3.61) < 1e-6);
        assert!(rel(hi, 100.0) < 1e-4);

        let white = PowerSpectrum::<f64>::white(1.0, G).unwrap();
        assert_eq!(white.extrema(), (1.0, 1.0));

        let tb = two_band();
        assert!((tb.variance() - 2.5).abs() < 1e-12);
        assert_eq!(tb.extrema(), (1.0, 4.0));
    }

    #[test]
    fn ma_matches_closed_form() {
        // |1 + 0.5 e^{-jw}|^2 = 1.25 + cos w
        let s = PowerSpectrum::<f64>::ma(vec![1.0, 0.5], 256).unwrap();
        for i in 0..256 {
            let f: f64 = s.frequency(i);
            let exact = 1.25 + (std::f64::consts::TAU * f).cos();
            assert!((s.values()[i] - exact).abs() < 1e-12);
            assert!((s.eval(f).unwrap() - exact).abs() < 1e-12);
        }
        let r = s.autocorrelation(3).unwrap();
        assert!((r[0] - 1.25).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12 && r[2].abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let s = PowerSpectrum::<f32>::ar(vec![0.9], 1.0, 1024).unwrap();
        assert!((s.entropy_power().unwrap() - 1.0).abs() < 1e-4);
        assert!((s.variance() - 1.0 / 0.19).abs() < 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn r0_matches_variance(a in -0.95f64..0.95, b in -0.5f64..0.5, s2 in 0.1f64..5.0) {
                prop_assume!(PowerSpectrum::<f64>::ar(vec![a, b], s2, 1024).is_ok());
                let s = PowerSpectrum::<f64>::ar(vec![a, b], s2, 1024).unwrap();
                let r = s.autocorrelation(4).unwrap();
                prop_assert!((r[0] - s.variance()).abs() <= 1e-9 * s.variance());
            }

            #[test]
            fn entropy_power_below_variance(vals in proptest::collection::vec(0.01f64..10.0, 32)) {
                let mut full = vals.clone();
                full.extend(vals.iter().rev());
                let s = PowerSpectrum::<f64>::tabulated(full).unwrap();
                let pe = s.entropy_power().unwrap();
                prop_assert!(pe <= s.variance() * (1.0 + 1e-12));
            }

            #[test]
            fn ar_entropy_power_is_innovation_variance(a in -0.9f64..0.9, s2 in 0.1f64..3.0) {
                let s = PowerSpectrum::<f64>::ar(vec![a], s2, 4096).unwrap();
                prop_assert!((s.entropy_power().unwrap() - s2).abs() <= 1e-6 * s2);
            }
        }

        #[test]
        fn flat_spectrum_attains_am_gm_equality() {
            let s = PowerSpectrum::<f64>::white(2.7, 512).unwrap();
            assert!((s.entropy_power().unwrap() - s.variance()).abs() < 1e-12);
        }

        #[test]
        fn grid_convergence() {
            let coarse = PowerSpectrum::<f64>::ar(vec![0.9], 1.0, 4096).unwrap();
            let fine = PowerSpectrum::<f64>::ar(vec![0.9], 1.0, 8192).unwrap();
            assert!(rel(coarse.variance(), fine.variance()) < 1e-6);
            assert!(rel(coarse.entropy_power().unwrap(), fine.entropy_power().unwrap()) < 1e-6);
        }
    }
}
