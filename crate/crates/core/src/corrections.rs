//! Corrections for rms fluctuations δ of the plate separation.
//!
//! Averaging a force law over a Gaussian gap distribution of width δ adds
//! ½F″(d)δ² to leading order, and biases a capacitive separation measurement
//! low because ⟨1/d⟩ = (1/d̄)(1 + (δ/d̄)²).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest d/δ for which the second-order expansion is used.
pub const MIN_SEPARATION_RATIO: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSpec {
    /// rms separation fluctuation, m.
    pub delta: f64,
    /// Uncertainty of `delta`, m.
    pub delta_sigma: f64,
}

impl FluctuationSpec {
    pub fn new(delta: f64, delta_sigma: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta_sigma >= 0.0) {
            return Err(Error::domain(format!(
                "fluctuation amplitude and its uncertainty must be non-negative, got {delta} ± {delta_sigma}"
            )));
        }
        Ok(Self { delta, delta_sigma })
    }

    pub const NONE: FluctuationSpec = FluctuationSpec {
        delta: 0.0,
        delta_sigma: 0.0,
    };
}

fn check_regime(d: f64, delta: f64) -> Result<()> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::domain(format!("separation must be positive, got {d}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::domain(format!("delta must be non-negative, got {delta}")));
    }
    if d <= MIN_SEPARATION_RATIO * delta {
        return Err(Error::Regime(format!(
            "d = {d:e} m is within {MIN_SEPARATION_RATIO}δ (δ = {delta:e} m)"
        )));
    }
    Ok(())
}

/// F″(d) from the five-point central stencil with h = max(1 nm, 10⁻³d).
pub fn second_derivative<F>(force: &F, d: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + ?Sized,
{
    let h = (1e-9_f64).max(1e-3 * d);
    if d - 2.0 * h <= 0.0 {
        return Err(Error::domain(format!("stencil leaves the physical range at d = {d:e} m")));
    }
    let fm2 = force(d - 2.0 * h)?;
    let fm1 = force(d - h)?;
    let f0 = force(d)?;
    let fp1 = force(d + h)?;
    let fp2 = force(d + 2.0 * h)?;
    Ok((-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h))
}

/// F(d) + ½F″(d)δ².
pub fn fluctuation_corrected_force<F>(force: &F, d: f64, delta: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + ?Sized,
{
    check_regime(d, delta)?;
    if delta == 0.0 {
        return force(d);
    }
    let f0 = force(d)?;
    Ok(f0 + 0.5 * second_derivative(force, d)? * delta * delta)
}

/// Maps a capacitively inferred separation to the mean gap, d(1 + (δ/d)²).
pub fn corrected_separation(d_inferred: f64, delta: f64) -> Result<f64> {
    check_regime(d_inferred, delta)?;
    let x = delta / d_inferred;
    Ok(d_inferred * (1.0 + x * x))
}

/// Inverse of [`corrected_separation`]: the separation a capacitive
/// measurement reports when the mean gap is `d_mean`.
pub fn effective_capacitive_separation(d_mean: f64, delta: f64) -> Result<f64> {
    if !(d_mean > 0.0) {
        return Err(Error::domain(format!("separation must be positive, got {d_mean}")));
    }
    let disc = d_mean * d_mean - 4.0 * delta * delta;
    if !(delta >= 0.0) || disc <= 0.0 {
        return Err(Error::Regime(format!("no capacitive separation for d = {d_mean:e}, δ = {delta:e}")));
    }
    let d_inf = 0.5 * (d_mean + disc.sqrt());
    check_regime(d_inf, delta)?;
    Ok(d_inf)
}

/// Half the spread of the corrected force between δ ± δσ.
pub fn correction_uncertainty<F>(force: &F, d: f64, spec: FluctuationSpec) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + ?Sized,
{
    check_regime(d, spec.delta)?;
    if spec.delta_sigma == 0.0 {
        return Ok(0.0);
    }
    let hi = fluctuation_corrected_force(force, d, spec.delta + spec.delta_sigma)?;
    let lo = fluctuation_corrected_force(force, d, (spec.delta - spec.delta_sigma).abs())?;
    Ok(0.5 * (hi - lo).abs())
}
