//! Physical constants and the handful of unit conversions the crate needs.
//!
//! Everything inside the library is SI. Electron-volts only appear where
//! photon energies are read from files or command-line flags.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant, J·s (CODATA 2018, exact via h).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Speed of light in vacuum, m/s (exact).
pub const C: f64 = 299_792_458.0;
/// Boltzmann constant, J/K (exact).
pub const K_B: f64 = 1.380_649e-23;
/// Vacuum permittivity, F/m (CODATA 2018).
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Elementary charge, C (exact).
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Apéry's constant ζ(3).
pub const ZETA3: f64 = 1.202_056_903_159_594_2;

/// Identifier of the constant set compiled into this build.
pub const CONSTANTS_VERSION: &str = "CODATA-2018";

/// The compiled-in constants gathered in one value, for manifests and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub hbar: f64,
    pub c: f64,
    pub k_b: f64,
    pub eps0: f64,
    pub zeta3: f64,
}

impl Constants {
    pub const CODATA_2018: Constants = Constants {
        hbar: HBAR,
        c: C,
        k_b: K_B,
        eps0: EPS0,
        zeta3: ZETA3,
    };
}

/// Angular frequency in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngularFrequency(pub f64);

impl AngularFrequency {
    pub const ZERO: AngularFrequency = AngularFrequency(0.0);

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Photon energy ħω expressed in eV.
    pub fn to_ev(self) -> f64 {
        self.0 * HBAR / E_CHARGE
    }
}

/// Converts a photon energy in eV to the angular frequency E·e/ħ.
pub fn ev_to_angular_frequency(energy_ev: f64) -> Result<AngularFrequency> {
    if !(energy_ev >= 0.0) || !energy_ev.is_finite() {
        return Err(Error::domain(format!(
            "photon energy must be finite and non-negative, got {energy_ev} eV"
        )));
    }
    Ok(AngularFrequency(energy_ev * E_CHARGE / HBAR))
}

/// Matsubara frequency ξₙ = 2πn k_B T / ħ.
///
/// Zero temperature has no discrete spectrum; use the explicit zero-temperature
/// routines in [`crate::lifshitz`] instead.
pub fn matsubara_frequency(n: u32, temperature: f64) -> Result<AngularFrequency> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::domain(format!(
            "Matsubara frequencies need T > 0, got {temperature} K"
        )));
    }
    Ok(AngularFrequency(
        2.0 * PI * f64::from(n) * K_B * temperature / HBAR,
    ))
}
