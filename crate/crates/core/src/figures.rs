//! Purity, indistinguishability, brightness and the relative error of the
//! regression theorem.

use serde::{Deserialize, Serialize};

use crate::correlators::{integrate_linear, AveragedCorrelations, Mode};
use crate::error::{domain, Result};
use crate::Real;

/// Figures of one mode at one parameter point, as fractions (1 = 100 %).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiguresOfMerit {
    pub mode: Mode,
    pub purity: f64,
    pub indistinguishability: f64,
    pub brightness: f64,
    pub dt: f64,
    pub n_c: usize,
    pub t_stride: usize,
}

impl FiguresOfMerit {
    pub fn from_curves(
        avg: &AveragedCorrelations<f64>,
        brightness: f64,
        period: f64,
        n_c: usize,
        t_stride: usize,
    ) -> Result<Self> {
        let tau = avg.tau();
        Ok(Self {
            mode: avg.mode,
            purity: purity(&tau, &avg.g2, period)?,
            indistinguishability: indistinguishability(&tau, &avg.g2_hom, period)?,
            brightness,
            dt: avg.dt,
            n_c,
            t_stride,
        })
    }
}

/// `1 − (central peak area) / (side peak area)` of a curve sampled at `τ ≥ 0`
/// and extended to negative delays by symmetry.
fn one_minus_ratio<T: Real>(tau: &[T], g: &[T], period: T) -> Result<T> {
    let half = period * T::lit(0.5);
    let central = T::lit(2.0) * integrate_linear(tau, g, T::zero(), half)?;
    let side = integrate_linear(tau, g, half, T::lit(3.0) * half)?;
    if !(side > T::zero()) {
        return Err(domain("side peak has no weight; the pulse train needs at least two pulses"));
    }
    Ok(T::one() - central / side)
}

/// Single-photon purity from the τ-averaged `G2(τ)`.
pub fn purity<T: Real>(tau: &[T], g2: &[T], period: T) -> Result<T> {
    one_minus_ratio(tau, g2, period)
}

/// Indistinguishability from the τ-averaged `G2HOM(τ)`.
pub fn indistinguishability<T: Real>(tau: &[T], g2_hom: &[T], period: T) -> Result<T> {
    one_minus_ratio(tau, g2_hom, period)
}

/// Photons emitted in `window`, `γ ∫ n(t) dt`. An ideal delta-pulse
/// excitation yields exactly one photon, so the result is the fraction of that
/// ideal. `occupation[k]` is sampled at `k·dt`; the emitter is in its ground
/// state before `t = 0`.
pub fn brightness<T: Real>(occupation: &[T], dt: T, gamma: T, window: (T, T)) -> Result<T> {
    if occupation.len() < 2 {
        return Err(domain("brightness needs an occupation trajectory"));
    }
    let t_end = dt * T::from_usize_lossy(occupation.len() - 1);
    if window.1 > t_end || window.0 >= window.1 {
        return Err(domain(format!("brightness window [{}, {}] outside the trajectory [0, {t_end}]", window.0, window.1)));
    }
    if window.1 <= T::zero() {
        return Ok(T::zero());
    }
    let ts: Vec<T> = (0..occupation.len()).map(|k| dt * T::from_usize_lossy(k)).collect();
    Ok(gamma * integrate_linear(&ts, occupation, window.0.max(T::zero()), window.1)?)
}

/// `|(M − M_QRT) / M|`
pub fn qrt_error(exact: f64, approx: f64) -> Result<f64> {
    if exact == 0.0 {
        return Err(domain("relative error undefined for a vanishing exact value"));
    }
    Ok(((exact - approx) / exact).abs())
}
