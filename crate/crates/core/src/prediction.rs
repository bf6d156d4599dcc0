//! Finite-order linear prediction by Levinson-Durbin recursion, clean and
//! from a noisy past, plus the spectral infinite-order limit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::spectra::PowerSpectrum;

/// Default predictor order.
pub const DEFAULT_PREDICTOR_ORDER: usize = 64;

/// Reflection coefficients are clamped to this distance from the unit circle.
const REFLECTION_MARGIN: f64 = 1e-12;

/// One-step linear predictor `x_hat[n] = sum_i coeffs[i-1] x[n-i]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictorCoeffs<T> {
    pub order: usize,
    pub coeffs: Vec<T>,
    /// Minimum mean-squared prediction error.
    pub mse: T,
    pub reflections: Vec<T>,
}

impl<T: Real> PredictorCoeffs<T> {
    /// Prediction from `past`, where `past[0]` is the most recent sample.
    pub fn predict(&self, past: &[T]) -> T {
        self.coeffs.iter().zip(past).map(|(&a, &x)| a * x).sum()
    }
}

/// Solves the order-`r.len() - 1` normal equations.
pub fn levinson<T: Real>(r: &[T]) -> Result<PredictorCoeffs<T>> {
    let Some(&r0) = r.first() else {
        return Err(Error::InvalidParameter("empty autocorrelation".into()));
    };
    if !(r0 > T::zero() && r0.is_finite()) {
        return Err(Error::NumericalDegeneracy { order: 0, reflection: f64::NAN });
    }
    let order = r.len() - 1;
    let margin = T::lit(REFLECTION_MARGIN).max(T::epsilon() * T::lit(8.0));
    let limit = T::one() - margin;
    let mut a: Vec<T> = Vec::with_capacity(order);
    let mut reflections = Vec::with_capacity(order);
    let mut err = r0;
    for m in 1..=order {
        let acc = r[m] - a.iter().enumerate().map(|(i, &ai)| ai * r[m - 1 - i]).sum::<T>();
        let mut k = acc / err;
        if !k.is_finite() || k.abs() > T::one() + margin {
            return Err(Error::NumericalDegeneracy { order: m, reflection: k.as_f64() });
        }
        if k.abs() > limit {
            k = limit.copysign(k);
        }
        let prev = a.clone();
        for i in 0..a.len() {
            a[i] -= k * prev[m - 2 - i];
        }
        a.push(k);
        reflections.push(k);
        err *= T::one() - k * k;
    }
    Ok(PredictorCoeffs {
        order,
        coeffs: a,
        mse: err.max(T::zero()),
        reflections,
    })
}

/// Order-`order` predictor of `U[n]` from the past of `V = U + N`, with `N`
/// white of variance `theta`. The reported `mse` is the error in predicting `U`.
pub fn noisy_predictor<T: Real>(spec_u: &PowerSpectrum<T>, theta: T, order: usize) -> Result<PredictorCoeffs<T>> {
    check_theta(theta)?;
    let mut r = spec_u.autocorrelation(order)?;
    r[0] += theta;
    let mut p = levinson(&r)?;
    p.mse = (p.mse - theta).max(T::zero());
    Ok(p)
}

/// Infinite-order noisy prediction error `Pe(max(theta, S)) - theta`.
pub fn sigma_infinity<T: Real>(spec: &PowerSpectrum<T>, theta: T) -> Result<T> {
    check_theta(theta)?;
    if theta >= spec.extrema().1 {
        return Ok(T::zero());
    }
    let v = spec.map_values(|s| s.max(theta))?;
    Ok((v.entropy_power()? - theta).max(T::zero()))
}

fn check_theta<T: Real>(theta: T) -> Result<()> {
    if theta > T::zero() && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "theta",
            value: theta.as_f64(),
            min: 0.0,
            max: f64::INFINITY,
        })
    }
}

/// Predictor coefficients and MSE from the normal equations for the
/// autocorrelation `r`, solved by Gaussian elimination with partial pivoting.
pub fn solve_normal_equations(r: &[f64]) -> (Vec<f64>, f64) {
    let l = r.len() - 1;
    let mut m: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            let mut row: Vec<f64> = (0..l).map(|j| r[i.abs_diff(j)]).collect();
            row.push(r[i + 1]);
            row
        })
        .collect();
    for c in 0..l {
        let p = (c..l).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        for rr in 0..l {
            if rr != c {
                let f = m[rr][c] / m[c][c];
                for cc in c..=l {
                    m[rr][cc] -= f * m[c][cc];
                }
            }
        }
    }
    let a: Vec<f64> = (0..l).map(|i| m[i][l] / m[i][i]).collect();
    let mse = r[0] - a.iter().enumerate().map(|(i, ai)| ai * r[i + 1]).sum::<f64>();
    (a, mse)
}
