//! Lifshitz free energy, pressure and sphere–plane force for two identical
//! half-spaces across a vacuum gap.
//!
//! At temperature T the free energy per unit area is the Matsubara sum
//!
//! ```text
//! F(d,T) = (k_B T / 2π) Σ′ₙ ∫₀^∞ k dk Σ_{TE,TM} ln(1 − r_p² e^{−2κ₀d}),   κ₀ = √(k² + ξₙ²/c²)
//! ```
//!
//! where the prime halves the n = 0 term. All wavevector integrals are done in
//! the dimensionless variable y = 2κ₀d on [sₙ, ∞) with sₙ = 2ξₙd/c, which turns
//! every integrand into a polynomial times e^(−y).
//!
//! The ξ = 0 term is never obtained as a numerical limit. It is dispatched on
//! the model's [`StaticResponse`]: a Drude-type conductor keeps only TM with
//! r = 1, a plasma-type conductor also keeps a TE term built from ω_p.
//!
//! Zero temperature is a separate code path that replaces k_B T Σ′ₙ by
//! (ħ/2π) ∫dξ. The sphere–plane force follows from the proximity force
//! approximation F = 2πR |F_pp(d)|.
//!
//! Sign convention: free energies are negative, pressures and forces are
//! reported positive when attractive.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{AngularFrequency, C, HBAR, K_B, ZETA3};
use crate::dielectric::{
    eps_imag_axis, DielectricModel, DrudeParams, PlasmaParams, StaticResponse,
};
use crate::error::{Error, Result};
use crate::quadrature::PanelQuadrature;

/// Sphere radius of the torsion-pendulum lens, m.
pub const PENDULUM_RADIUS: f64 = 0.156;
/// Largest d/R for which the proximity force approximation is trusted here.
pub const PFA_MAX_RATIO: f64 = 1e-3;

/// Number of Matsubara terms evaluated per parallel batch. Fixed so the
/// summation order (and hence the result) does not depend on the thread count.
const MATSUBARA_BATCH: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Sphere radius of curvature, m.
    pub radius: f64,
    /// Closest sphere–plane distance, m.
    pub separation: f64,
}

impl Geometry {
    pub fn new(radius: f64, separation: f64) -> Result<Self> {
        check_positive("sphere radius", radius)?;
        check_positive("separation", separation)?;
        Ok(Self { radius, separation })
    }

    pub fn pfa_valid(&self) -> bool {
        self.separation / self.radius < PFA_MAX_RATIO
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionPair {
    pub r_te: f64,
    pub r_tm: f64,
}

/// Numerical controls for the Lifshitz quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub max_matsubara: u32,
    /// Gauss–Legendre nodes of the coarse rule on each panel.
    pub k_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_matsubara: 100_000,
            k_nodes: 16,
        }
    }
}

impl QuadratureSpec {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-3) {
            return Err(Error::domain(format!(
                "rel_tol must lie in (0, 1e-3], got {}",
                self.rel_tol
            )));
        }
        if self.max_matsubara < 1 {
            return Err(Error::domain("max_matsubara must be at least 1"));
        }
        if self.k_nodes < 2 {
            return Err(Error::domain("k_nodes must be at least 2"));
        }
        Ok(())
    }
}

/// Low-frequency prescription of a conducting plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Drude,
    Plasma,
}

/// Polarization selector for diagnostics of individual Matsubara terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    Te,
    Tm,
    Both,
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be positive, got {v}")))
    }
}

/// Fresnel coefficients at imaginary frequency ξ > 0 for wavevector k.
///
/// With ξ = 0 the permittivity is taken as a static dielectric constant; for
/// conductors use [`static_reflection_coeffs`] with the model's static response.
pub fn reflection_coeffs(k: f64, xi: AngularFrequency, eps: f64) -> Result<ReflectionPair> {
    check_positive("wavevector", k)?;
    if !(xi.0 >= 0.0) {
        return Err(Error::domain("imaginary frequency must be non-negative"));
    }
    if !(eps >= 1.0) {
        return Err(Error::domain(format!("permittivity {eps} < 1")));
    }
    let xc = xi.0 / C;
    let k0 = (k * k + xc * xc).sqrt();
    let kappa = (k * k + eps * xc * xc).sqrt();
    Ok(ReflectionPair {
        r_te: -(eps - 1.0) * xc * xc / ((k0 + kappa) * (k0 + kappa)),
        r_tm: (eps * k0 - kappa) / (eps * k0 + kappa),
    })
}

/// Fresnel coefficients at ξ = 0, dispatched on the model family.
pub fn static_reflection_coeffs(k: f64, response: StaticResponse) -> Result<ReflectionPair> {
    check_positive("wavevector", k)?;
    Ok(match response {
        StaticResponse::DissipativeConductor => ReflectionPair { r_te: 0.0, r_tm: 1.0 },
        StaticResponse::PlasmaConductor { omega_p } => {
            let q = (k * k + (omega_p / C) * (omega_p / C)).sqrt();
            ReflectionPair {
                r_te: (k - q) / (k + q),
                r_tm: 1.0,
            }
        }
        StaticResponse::Dielectric { eps_static } => ReflectionPair {
            r_te: 0.0,
            r_tm: (eps_static - 1.0) / (eps_static + 1.0),
        },
    })
}

/// Reflection data for one imaginary frequency, in the y = 2κ₀d variable.
#[derive(Debug, Clone, Copy)]
enum Channel {
    /// ξ > 0 with s = 2ξd/c and ε = ε(iξ).
    Dynamic { s: f64, eps: f64 },
    /// ξ = 0, s = 0.
    Static(StaticResponse),
}

/// (r², 1 − r²) for one polarization, computed without cancellation.
#[derive(Debug, Clone, Copy)]
struct Reflectance {
    r2: f64,
    one_minus_r2: f64,
}

impl Reflectance {
    const ZERO: Reflectance = Reflectance {
        r2: 0.0,
        one_minus_r2: 1.0,
    };
    const ONE: Reflectance = Reflectance {
        r2: 1.0,
        one_minus_r2: 0.0,
    };

    /// r = −(q − y)/(q + y) style coefficient with q > y ≥ 0 and (q−y)(q+y) = extra.
    fn te_like(y: f64, q: f64, extra: f64) -> Self {
        let sum = y + q;
        let r = extra / (sum * sum);
        Reflectance {
            r2: r * r,
            one_minus_r2: 4.0 * y * q / (sum * sum),
        }
    }

    fn tm_like(a: f64, b: f64) -> Self {
        let sum = a + b;
        let r = (a - b) / sum;
        Reflectance {
            r2: r * r,
            one_minus_r2: 4.0 * a * b / (sum * sum),
        }
    }

    /// ln(1 − r² e^{−y}).
    fn log_term(self, y: f64) -> f64 {
        if self.r2 == 0.0 {
            return 0.0;
        }
        let x = self.r2 * (-y).exp();
        if x < 0.5 {
            (-x).ln_1p()
        } else {
            (self.one_minus_r2 - self.r2 * (-y).exp_m1()).ln()
        }
    }

    /// r² e^{−y} / (1 − r² e^{−y}).
    fn pressure_term(self, y: f64) -> f64 {
        if self.r2 == 0.0 {
            return 0.0;
        }
        let num = self.r2 * (-y).exp();
        num / (self.one_minus_r2 - self.r2 * (-y).exp_m1())
    }
}

impl Channel {
    fn reflectances(&self, y: f64, d: f64) -> (Reflectance, Reflectance) {
        match *self {
            Channel::Dynamic { s, eps } => {
                let extra = (eps - 1.0) * s * s;
                let q = (y * y + extra).sqrt();
                (Reflectance::te_like(y, q, extra), Reflectance::tm_like(eps * y, q))
            }
            Channel::Static(StaticResponse::DissipativeConductor) => {
                (Reflectance::ZERO, Reflectance::ONE)
            }
            Channel::Static(StaticResponse::PlasmaConductor { omega_p }) => {
                let p = 2.0 * d * omega_p / C;
                let extra = p * p;
                let q = (y * y + extra).sqrt();
                (Reflectance::te_like(y, q, extra), Reflectance::ONE)
            }
            Channel::Static(StaticResponse::Dielectric { eps_static }) => {
                (Reflectance::ZERO, Reflectance::tm_like(eps_static, 1.0))
            }
        }
    }

    fn lower_limit(&self) -> f64 {
        match *self {
            Channel::Dynamic { s, .. } => s,
            Channel::Static(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    /// ∫ y Σ ln(1 − r² e^{−y}) dy
    Energy,
    /// ∫ y² Σ r² e^{−y}/(1 − r² e^{−y}) dy
    Pressure,
}

fn mode_integral(
    q: &PanelQuadrature,
    channel: Channel,
    d: f64,
    kernel: Kernel,
    pol: Polarization,
) -> Result<f64> {
    let (use_te, use_tm) = match pol {
        Polarization::Te => (true, false),
        Polarization::Tm => (false, true),
        Polarization::Both => (true, true),
    };
    let integrand = |y: f64| {
        if y <= 0.0 {
            return 0.0;
        }
        let (te, tm) = channel.reflectances(y, d);
        let mut v = 0.0;
        match kernel {
            Kernel::Energy => {
                if use_te {
                    v += te.log_term(y);
                }
                if use_tm {
                    v += tm.log_term(y);
                }
                y * v
            }
            Kernel::Pressure => {
                if use_te {
                    v += te.pressure_term(y);
                }
                if use_tm {
                    v += tm.pressure_term(y);
                }
                y * y * v
            }
        }
    };
    q.integrate_to_infinity(integrand, channel.lower_limit())
}

fn channel_at(model: &DielectricModel, xi: f64, d: f64) -> Result<Channel> {
    if xi == 0.0 {
        return Ok(Channel::Static(model.static_response()));
    }
    let eps = eps_imag_axis(model, AngularFrequency(xi))?;
    Ok(Channel::Dynamic {
        s: 2.0 * xi * d / C,
        eps,
    })
}

fn check_inputs(d: f64, t: f64, spec: &QuadratureSpec) -> Result<()> {
    check_positive("separation", d)?;
    check_positive("temperature", t)?;
    spec.validate()
}

/// ħc / (2π k_B T d): spacing parameter of the Matsubara series.
fn thermal_ratio(d: f64, t: f64) -> f64 {
    HBAR * C / (2.0 * PI * K_B * t * d)
}

/// Largest Matsubara index evaluated before declaring non-convergence.
fn matsubara_cap(d: f64, t: f64, spec: &QuadratureSpec) -> u32 {
    // terms fall off like e^{−2n/ratio}; 15 e-folds per unit ratio covers
    // rel_tol down to ~1e-9, tighter tolerances need proportionally more.
    let efolds = 15.0_f64.max(1.5 * (1.0 / spec.rel_tol).ln());
    let n = (efolds * thermal_ratio(d, t)).ceil() + 10.0;
    if n >= f64::from(spec.max_matsubara) {
        spec.max_matsubara
    } else {
        n as u32
    }
}

/// Sums terms 0, 1, 2, … until the estimated remainder drops below
/// `rel_tol` of the running sum. Terms are computed in fixed-size parallel
/// batches and summed strictly in index order.
fn matsubara_sum<F>(term: F, rel_tol: f64, cap: u32) -> Result<f64>
where
    F: Fn(u32) -> Result<f64> + Sync,
{
    let mut sum = 0.0;
    let mut prev: Option<f64> = None;
    let mut start = 0u32;
    let mut last_ratio = f64::NAN;
    while start <= cap {
        let end = (start + MATSUBARA_BATCH).min(cap + 1);
        let batch: Vec<f64> = (start..end)
            .into_par_iter()
            .map(&term)
            .collect::<Result<Vec<_>>>()?;
        for (n, t) in (start..end).zip(batch) {
            sum += t;
            if n == 0 {
                prev = Some(t);
                continue;
            }
            let ratio = match prev {
                Some(p) if p != 0.0 => (t / p).abs(),
                _ => 0.0,
            };
            prev = Some(t);
            let tail = if ratio < 1.0 {
                t.abs() * (1.0 + ratio / (1.0 - ratio))
            } else {
                f64::INFINITY
            };
            last_ratio = if sum != 0.0 { tail / sum.abs() } else { 0.0 };
            if t == 0.0 || tail <= rel_tol * sum.abs() {
                return Ok(sum);
            }
        }
        start = end;
    }
    Err(Error::Convergence {
        context: format!("Matsubara series not converged within {cap} terms"),
        achieved: last_ratio,
    })
}

fn term_quadrature(spec: &QuadratureSpec) -> PanelQuadrature {
    PanelQuadrature::new(spec.k_nodes, (0.1 * spec.rel_tol).max(1e-14))
}

/// Contribution of Matsubara index `n` to the free energy per area (J/m²),
/// including the half weight of n = 0.
pub fn matsubara_term(
    d: f64,
    t: f64,
    n: u32,
    model: &DielectricModel,
    pol: Polarization,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_inputs(d, t, spec)?;
    let q = term_quadrature(spec);
    let xi = crate::constants::matsubara_frequency(n, t)?.0;
    let weight = if n == 0 { 0.5 } else { 1.0 };
    let integral = mode_integral(&q, channel_at(model, xi, d)?, d, Kernel::Energy, pol)?;
    Ok(K_B * t / (2.0 * PI) * weight * integral / (4.0 * d * d))
}

fn thermal_series(
    d: f64,
    t: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
    kernel: Kernel,
) -> Result<f64> {
    check_inputs(d, t, spec)?;
    let q = term_quadrature(spec);
    let step = 2.0 * PI * K_B * t / HBAR;
    let cap = matsubara_cap(d, t, spec);
    matsubara_sum(
        |n| {
            let xi = f64::from(n) * step;
            let weight = if n == 0 { 0.5 } else { 1.0 };
            let ch = channel_at(model, xi, d)?;
            Ok(weight * mode_integral(&q, ch, d, kernel, Polarization::Both)?)
        },
        spec.rel_tol,
        cap,
    )
}

/// Lifshitz free energy per unit area at temperature T > 0, J/m² (negative).
pub fn free_energy_per_area(
    d: f64,
    t: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let sum = thermal_series(d, t, model, spec, Kernel::Energy)?;
    Ok(K_B * t / (2.0 * PI) * sum / (4.0 * d * d))
}

/// Parallel-plate pressure at T > 0, N/m², positive when attractive.
pub fn pressure_parallel(
    d: f64,
    t: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let sum = thermal_series(d, t, model, spec, Kernel::Pressure)?;
    Ok(K_B * t / PI * sum / (8.0 * d * d * d))
}

/// ∫₀^∞ ds (inner kernel at ξ = cs/2d), the zero-temperature frequency integral.
fn zero_temperature_integral(
    d: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
    kernel: Kernel,
) -> Result<f64> {
    check_positive("separation", d)?;
    spec.validate()?;
    let outer = PanelQuadrature::new(spec.k_nodes, spec.rel_tol);
    let inner = PanelQuadrature::new(spec.k_nodes, (1e-2 * spec.rel_tol).max(1e-14));
    let mut failure: Option<Error> = None;
    let value = outer.integrate_to_infinity(
        |s| {
            if failure.is_some() || s <= 0.0 {
                return 0.0;
            }
            let xi = s * C / (2.0 * d);
            let res = channel_at(model, xi, d)
                .and_then(|ch| mode_integral(&inner, ch, d, kernel, Polarization::Both));
            match res {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        0.0,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Zero-temperature Lifshitz free energy per area, J/m² (negative).
pub fn free_energy_per_area_t0(d: f64, model: &DielectricModel, spec: &QuadratureSpec) -> Result<f64> {
    let integral = zero_temperature_integral(d, model, spec, Kernel::Energy)?;
    Ok(HBAR * C / (32.0 * PI * PI * d * d * d) * integral)
}

/// Zero-temperature parallel-plate pressure, N/m², positive when attractive.
pub fn pressure_parallel_t0(d: f64, model: &DielectricModel, spec: &QuadratureSpec) -> Result<f64> {
    let integral = zero_temperature_integral(d, model, spec, Kernel::Pressure)?;
    Ok(HBAR * C / (32.0 * PI * PI * d.powi(4)) * integral)
}

fn pfa(d: f64, r: f64, energy: f64) -> f64 {
    if d / r > PFA_MAX_RATIO {
        log::warn!(
            "proximity force approximation used at d/R = {:.2e} > {PFA_MAX_RATIO:e}",
            d / r
        );
    }
    2.0 * PI * r * energy.abs()
}

/// Sphere–plane force at T > 0 in the proximity force approximation, N.
pub fn force_sphere_plane(
    d: f64,
    t: f64,
    r: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_positive("sphere radius", r)?;
    Ok(pfa(d, r, free_energy_per_area(d, t, model, spec)?))
}

/// Sphere–plane force from the zero-temperature Lifshitz formula, N.
pub fn force_sphere_plane_t0(
    d: f64,
    r: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_positive("sphere radius", r)?;
    Ok(pfa(d, r, free_energy_per_area_t0(d, model, spec)?))
}

/// Sphere–plane force with `t == 0` routed to the zero-temperature path.
pub fn casimir_force(
    d: f64,
    t: f64,
    r: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if t == 0.0 {
        force_sphere_plane_t0(d, r, model, spec)
    } else {
        force_sphere_plane(d, t, r, model, spec)
    }
}

/// [`casimir_force`] over a grid of separations, evaluated in parallel.
pub fn force_curve(
    separations: &[f64],
    t: f64,
    r: f64,
    model: &DielectricModel,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    separations
        .par_iter()
        .map(|&d| casimir_force(d, t, r, model, spec))
        .collect()
}

/// Leading large-separation thermal force, ζ(3) R k_B T / (8d²) for Drude and
/// twice that for the plasma model.
pub fn asymptote_thermal(d: f64, r: f64, t: f64, family: ModelFamily) -> Result<f64> {
    check_positive("separation", d)?;
    check_positive("sphere radius", r)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("temperature must be non-negative, got {t}")));
    }
    let drude = ZETA3 * r * K_B * t / (8.0 * d * d);
    Ok(match family {
        ModelFamily::Drude => drude,
        ModelFamily::Plasma => 2.0 * drude,
    })
}

/// Ideal-metal sphere–plane force at zero temperature, π³ħcR/(360 d³).
pub fn ideal_sphere_plane_force(d: f64, r: f64) -> f64 {
    2.0 * PI.powi(3) * HBAR * C * r / (720.0 * d.powi(3))
}

/// Ideal-metal parallel-plate pressure at zero temperature, π²ħc/(240 d⁴).
pub fn ideal_parallel_pressure(d: f64) -> f64 {
    PI * PI * HBAR * C / (240.0 * d.powi(4))
}

/// Parameter ranges explored by [`sensitivity_band`], in eV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRanges {
    pub omega_p_ev: (f64, f64),
    pub gamma_ev: (f64, f64),
}

impl Default for BandRanges {
    fn default() -> Self {
        Self {
            omega_p_ev: (6.85, 9.00),
            gamma_ev: (0.02, 0.061),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandPoint {
    pub separation: f64,
    pub f_min: f64,
    pub f_center: f64,
    pub f_max: f64,
}

fn family_model(family: ModelFamily, omega_p_ev: f64, gamma_ev: f64) -> Result<DielectricModel> {
    Ok(match family {
        ModelFamily::Drude => DielectricModel::Drude(DrudeParams::from_ev(omega_p_ev, gamma_ev)?),
        ModelFamily::Plasma => DielectricModel::Plasma(PlasmaParams::from_ev(omega_p_ev)?),
    })
}

/// Envelope of the sphere–plane force over the four corners and the midpoint
/// of the (ω_p, γ) box, per separation. `t == 0` uses the zero-temperature path.
pub fn sensitivity_band(
    separations: &[f64],
    t: f64,
    r: f64,
    ranges: BandRanges,
    family: ModelFamily,
    spec: &QuadratureSpec,
) -> Result<Vec<BandPoint>> {
    if separations.is_empty() {
        return Err(Error::Arity { needed: 1, got: 0 });
    }
    let (wp_lo, wp_hi) = ranges.omega_p_ev;
    let (g_lo, g_hi) = ranges.gamma_ev;
    if !(wp_lo <= wp_hi && g_lo <= g_hi) {
        return Err(Error::domain("band ranges must be ordered (min <= max)"));
    }
    // centre first
    let params = [
        (0.5 * (wp_lo + wp_hi), 0.5 * (g_lo + g_hi)),
        (wp_lo, g_lo),
        (wp_lo, g_hi),
        (wp_hi, g_lo),
        (wp_hi, g_hi),
    ];
    let models = params
        .iter()
        .map(|&(wp, g)| family_model(family, wp, g))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..separations.len())
        .flat_map(|i| (0..models.len()).map(move |m| (i, m)))
        .collect();
    let forces = jobs
        .par_iter()
        .map(|&(i, m)| casimir_force(separations[i], t, r, &models[m], spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(separations
        .iter()
        .zip(forces.chunks(models.len()))
        .map(|(&d, f)| BandPoint {
            separation: d,
            f_min: f.iter().copied().fold(f64::INFINITY, f64::min),
            f_center: f[0],
            f_max: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}
