//! Permittivity on the imaginary frequency axis, ε(iξ).
//!
//! Three descriptions are supported: the Drude and plasma models in closed
//! form, and tabulated absorption data ε″(ω) turned into ε(iξ) through the
//! Kramers–Kronig relation
//!
//! ```text
//! ε(iξ) = 1 + (2/π) ∫₀^∞ ω ε″(ω) / (ω² + ξ²) dω
//! ```
//!
//! with the integral split at the table boundaries: the Drude or plasma
//! absorption below the first row, the trapezoid rule across the table, and a
//! power-law tail ε″ ∝ ω^(−s) above the last row.
//!
//! ξ = 0 is never evaluated here. The static limit is where the Drude and
//! plasma prescriptions part ways and it is handled by [`crate::lifshitz`]
//! through [`DielectricModel::static_response`].

use std::f64::consts::FRAC_2_PI;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::constants::{ev_to_angular_frequency, AngularFrequency};
use crate::error::{Error, Result};
use crate::quadrature::PanelQuadrature;

/// Plasma frequency of gold used for the reference theory curves, eV.
pub const GOLD_OMEGA_P_EV: f64 = 7.54;
/// Drude dissipation rate of gold used for the reference theory curves, eV.
pub const GOLD_GAMMA_EV: f64 = 0.051;
/// Default exponent of the ε″ ∝ ω^(−s) high-frequency tail.
pub const DEFAULT_TAIL_EXPONENT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrudeParams {
    pub omega_p: AngularFrequency,
    pub gamma: AngularFrequency,
}

impl DrudeParams {
    pub fn new(omega_p: AngularFrequency, gamma: AngularFrequency) -> Result<Self> {
        if !(omega_p.0 > 0.0 && omega_p.0.is_finite()) {
            return Err(Error::domain("Drude plasma frequency must be positive"));
        }
        if !(gamma.0 > 0.0 && gamma.0.is_finite()) {
            return Err(Error::domain("Drude dissipation rate must be positive"));
        }
        Ok(Self { omega_p, gamma })
    }

    pub fn from_ev(omega_p_ev: f64, gamma_ev: f64) -> Result<Self> {
        Self::new(
            ev_to_angular_frequency(omega_p_ev)?,
            ev_to_angular_frequency(gamma_ev)?,
        )
    }

    /// ω_p = 7.54 eV, γ = 0.051 eV.
    pub fn gold() -> Self {
        Self::from_ev(GOLD_OMEGA_P_EV, GOLD_GAMMA_EV).expect("gold parameters are valid")
    }

    /// ε(iξ) = 1 + ω_p² / (ξ(ξ + γ)).
    pub fn eps_imag_axis(&self, xi: f64) -> f64 {
        let wp = self.omega_p.0;
        1.0 + wp * wp / (xi * (xi + self.gamma.0))
    }

    /// Absorptive part on the real axis, ε″(ω) = ω_p² γ / (ω(ω² + γ²)).
    pub fn eps_imag_part(&self, omega: f64) -> f64 {
        let (wp, g) = (self.omega_p.0, self.gamma.0);
        wp * wp * g / (omega * (omega * omega + g * g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasmaParams {
    pub omega_p: AngularFrequency,
}

impl PlasmaParams {
    pub fn new(omega_p: AngularFrequency) -> Result<Self> {
        if !(omega_p.0 > 0.0 && omega_p.0.is_finite()) {
            return Err(Error::domain("plasma frequency must be positive"));
        }
        Ok(Self { omega_p })
    }

    pub fn from_ev(omega_p_ev: f64) -> Result<Self> {
        Self::new(ev_to_angular_frequency(omega_p_ev)?)
    }

    pub fn gold() -> Self {
        Self::from_ev(GOLD_OMEGA_P_EV).expect("gold parameters are valid")
    }

    /// ε(iξ) = 1 + ω_p² / ξ².
    pub fn eps_imag_axis(&self, xi: f64) -> f64 {
        let r = self.omega_p.0 / xi;
        1.0 + r * r
    }
}

/// Tabulated absorption ε″(ω), strictly increasing in ω.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalTable {
    omega: Vec<f64>,
    eps_imag: Vec<f64>,
}

impl OpticalTable {
    /// Validates rows of (ω in rad/s, ε″). Row numbers in errors are 1-based.
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::validation(
                None,
                format!("optical table needs at least 2 rows, got {}", rows.len()),
            ));
        }
        for (i, &(w, e)) in rows.iter().enumerate() {
            let row = Some(i + 1);
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::validation(row, format!("frequency {w} is not positive")));
            }
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::validation(row, format!("eps_imag {e} is negative or not finite")));
            }
            if i > 0 && w <= rows[i - 1].0 {
                return Err(Error::validation(
                    row,
                    "frequencies must be strictly increasing (row out of order or duplicated)",
                ));
            }
        }
        let (omega, eps_imag) = rows.into_iter().unzip();
        Ok(Self { omega, eps_imag })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn eps_imag(&self) -> &[f64] {
        &self.eps_imag
    }

    pub fn omega_min(&self) -> f64 {
        self.omega[0]
    }

    pub fn omega_max(&self) -> f64 {
        self.omega[self.omega.len() - 1]
    }
}

#[derive(Debug, Deserialize)]
struct OpticalRow {
    photon_energy_ev: f64,
    eps_imag: f64,
}

/// Reads an optical-data CSV with header `photon_energy_ev,eps_imag`.
pub fn load_optical_table(path: impl AsRef<Path>) -> Result<OpticalTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_optical_table(file)
}

/// Same as [`load_optical_table`] for any reader.
pub fn read_optical_table<R: std::io::Read>(reader: R) -> Result<OpticalTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::validation(None, format!("unreadable header: {e}")))?
        .clone();
    for col in ["photon_energy_ev", "eps_imag"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::validation(None, format!("missing column `{col}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<OpticalRow>().enumerate() {
        let row = rec.map_err(|e| Error::validation(Some(i + 1), e.to_string()))?;
        let omega = ev_to_angular_frequency(row.photon_energy_ev)
            .map_err(|e| Error::validation(Some(i + 1), e.to_string()))?;
        rows.push((omega.0, row.eps_imag));
    }
    OpticalTable::new(rows)
}

/// How the absorption is continued below the first table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LowFrequency {
    Drude(DrudeParams),
    Plasma(PlasmaParams),
    /// No absorption below the table: an insulator.
    Transparent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedModel {
    pub table: OpticalTable,
    pub low: LowFrequency,
    pub tail_exponent: f64,
}

impl TabulatedModel {
    pub fn new(table: OpticalTable, low: LowFrequency, tail_exponent: f64) -> Result<Self> {
        if !(tail_exponent >= 1.0 && tail_exponent.is_finite()) {
            return Err(Error::domain(format!(
                "tail exponent must be >= 1, got {tail_exponent}"
            )));
        }
        Ok(Self {
            table,
            low,
            tail_exponent,
        })
    }

    fn eps_imag_axis(&self, xi: f64) -> f64 {
        let low = match self.low {
            LowFrequency::Drude(p) => {
                let (wp, g) = (p.omega_p.0, p.gamma.0);
                FRAC_2_PI * wp * wp * g * drude_low_band(self.table.omega_min(), g, xi)
            }
            // ε″ of the plasma model is a δ-function at ω = 0; its whole weight
            // sits below the table.
            LowFrequency::Plasma(p) => {
                let r = p.omega_p.0 / xi;
                r * r
            }
            LowFrequency::Transparent => 0.0,
        };
        let xi2 = xi * xi;
        let h = |w: f64, e: f64| w * e / (w * w + xi2);
        let table = self
            .table
            .omega
            .windows(2)
            .zip(self.table.eps_imag.windows(2))
            .map(|(w, e)| 0.5 * (w[1] - w[0]) * (h(w[0], e[0]) + h(w[1], e[1])))
            .sum::<f64>();
        let tail = self.tail(xi);
        1.0 + low + FRAC_2_PI * (table + tail)
    }

    /// ε(0) of an insulating table, 1 + (2/π)∫ ε″(ω)/ω dω.
    pub fn static_permittivity(&self) -> f64 {
        let t = &self.table;
        let body = t
            .omega
            .windows(2)
            .zip(t.eps_imag.windows(2))
            .map(|(w, e)| 0.5 * (w[1] - w[0]) * (e[0] / w[0] + e[1] / w[1]))
            .sum::<f64>();
        let tail = t.eps_imag.last().copied().unwrap_or(0.0) / self.tail_exponent;
        1.0 + FRAC_2_PI * (body + tail)
    }

    /// ∫_{ω_max}^∞ ω ε″(ω)/(ω²+ξ²) dω with ε″ = ε″_max (ω_max/ω)^s, written
    /// with t = ω_max/ω as ε″_max ∫₀¹ t^(s−1) / (1 + (ξ/ω_max)² t²) dt.
    fn tail(&self, xi: f64) -> f64 {
        let e_max = *self.table.eps_imag.last().expect("table has rows");
        if e_max == 0.0 {
            return 0.0;
        }
        let beta = xi / self.table.omega_max();
        let s = self.tail_exponent;
        let integral = tail_quadrature()
            .integrate(|t| t.powf(s - 1.0) / (1.0 + beta * beta * t * t), 0.0, 1.0)
            .unwrap_or_else(|_| {
                // the integrand is bounded by 1 on [0,1]; fall back to a fixed rule
                crate::quadrature::GaussLegendre::new(64).integrate(
                    &mut |t: f64| t.powf(s - 1.0) / (1.0 + beta * beta * t * t),
                    0.0,
                    1.0,
                )
            });
        e_max * integral
    }
}

fn tail_quadrature() -> &'static PanelQuadrature {
    static Q: OnceLock<PanelQuadrature> = OnceLock::new();
    Q.get_or_init(|| PanelQuadrature::new(16, 1e-12))
}

/// ∫₀^a dω / ((ω² + γ²)(ω² + ξ²)).
fn drude_low_band(a: f64, gamma: f64, xi: f64) -> f64 {
    let g = |b: f64| (a / b).atan() / b;
    let (g2, x2) = (gamma * gamma, xi * xi);
    if (x2 - g2).abs() > 1e-4 * x2.max(g2) {
        (g(gamma) - g(xi)) / (x2 - g2)
    } else {
        // divided difference in b² evaluated at the midpoint
        let b = (0.5 * (x2 + g2)).sqrt();
        ((a / b).atan() + a * b / (a * a + b * b)) / (2.0 * b * b * b)
    }
}

/// What the reflection coefficients do at ξ = 0 for a given model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StaticResponse {
    /// Drude-type conductor: r_TE = 0, r_TM = 1.
    DissipativeConductor,
    /// Plasma-type conductor: r_TM = 1, r_TE from the plasma frequency.
    PlasmaConductor { omega_p: f64 },
    /// Insulator with finite static permittivity.
    Dielectric { eps_static: f64 },
}

/// Permittivity model for the plates.
#[derive(Debug, Clone, PartialEq)]
pub enum DielectricModel {
    Drude(DrudeParams),
    Plasma(PlasmaParams),
    Tabulated(TabulatedModel),
    /// Frequency-independent ε. With ε very large this is the ideal-metal limit.
    Constant(f64),
}

impl DielectricModel {
    pub fn gold_drude() -> Self {
        DielectricModel::Drude(DrudeParams::gold())
    }

    pub fn gold_plasma() -> Self {
        DielectricModel::Plasma(PlasmaParams::gold())
    }

    /// Large constant permittivity used to reach the perfect-conductor limit.
    pub fn ideal_metal() -> Self {
        DielectricModel::Constant(1e12)
    }

    pub fn static_response(&self) -> StaticResponse {
        match self {
            DielectricModel::Drude(_)
            | DielectricModel::Tabulated(TabulatedModel {
                low: LowFrequency::Drude(_),
                ..
            }) => StaticResponse::DissipativeConductor,
            DielectricModel::Plasma(p)
            | DielectricModel::Tabulated(TabulatedModel {
                low: LowFrequency::Plasma(p),
                ..
            }) => StaticResponse::PlasmaConductor {
                omega_p: p.omega_p.0,
            },
            DielectricModel::Tabulated(t @ TabulatedModel {
                low: LowFrequency::Transparent,
                ..
            }) => StaticResponse::Dielectric {
                eps_static: t.static_permittivity(),
            },
            DielectricModel::Constant(eps) => StaticResponse::Dielectric { eps_static: *eps },
        }
    }
}

/// ε(iξ) for ξ > 0.
pub fn eps_imag_axis(model: &DielectricModel, xi: AngularFrequency) -> Result<f64> {
    let xi = xi.0;
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::domain(format!(
            "eps_imag_axis needs xi > 0, got {xi}; the static limit is handled by the Lifshitz engine"
        )));
    }
    let eps = match model {
        DielectricModel::Drude(p) => p.eps_imag_axis(xi),
        DielectricModel::Plasma(p) => p.eps_imag_axis(xi),
        DielectricModel::Tabulated(t) => t.eps_imag_axis(xi),
        DielectricModel::Constant(eps) => {
            if !(*eps >= 1.0) {
                return Err(Error::domain(format!("constant permittivity {eps} < 1")));
            }
            *eps
        }
    };
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ev_to_angular_frequency as ev;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn closed_form_examples() {
        let plasma = DielectricModel::gold_plasma();
        let wp = ev(7.54).unwrap();
        assert!(rel(eps_imag_axis(&plasma, wp).unwrap(), 2.0) < 1e-14);

        // 1 + 56.8516 / (0.16243 · 0.21343) and 1 + 56.8516 / 0.16243², by hand
        let xi = ev(0.16243).unwrap();
        let drude = eps_imag_axis(&DielectricModel::gold_drude(), xi).unwrap();
        assert!(rel(drude, 1640.9) < 1e-4, "{drude}");
        let plasma_v = eps_imag_axis(&plasma, xi).unwrap();
        assert!(rel(plasma_v, 2155.8) < 1e-4, "{plasma_v}");
    }

    #[test]
    fn rejects_non_positive_frequency() {
        let m = DielectricModel::gold_drude();
        assert!(eps_imag_axis(&m, AngularFrequency(0.0)).is_err());
        assert!(eps_imag_axis(&m, AngularFrequency(-1.0)).is_err());
    }

    #[test]
    fn drude_and_plasma_merge_at_high_frequency() {
        let d = DrudeParams::gold();
        let p = PlasmaParams::gold();
        for xi_ev in [10.0, 50.0, 300.0] {
            let xi = ev(xi_ev).unwrap().0;
            let (ed, ep) = (d.eps_imag_axis(xi), p.eps_imag_axis(xi));
            assert!((ep - ed) / ep < d.gamma.0 / xi);
        }
    }

    #[test]
    fn table_validation() {
        assert!(matches!(
            OpticalTable::new(vec![(1.0, 1.0)]),
            Err(Error::Validation { .. })
        ));
        match OpticalTable::new(vec![(1.0, 1.0), (3.0, 1.0), (2.0, 1.0)]) {
            Err(Error::Validation { row: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match OpticalTable::new(vec![(1.0, 1.0), (2.0, -0.1)]) {
            Err(Error::Validation { row: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(OpticalTable::new(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn csv_loading() {
        let t = read_optical_table("photon_energy_ev,eps_imag\n1.0,5.0\n2.0,3.0\n".as_bytes()).unwrap();
        assert!(rel(t.omega()[0], 1.519_267e15) < 1e-6);
        assert!(rel(t.omega()[1], 3.038_534e15) < 1e-6);
        assert_eq!(t.eps_imag(), &[5.0, 3.0]);

        assert!(matches!(read_optical_table("".as_bytes()), Err(Error::Validation { .. })));
        assert!(matches!(
            read_optical_table("photon_energy_ev,eps_imag\n".as_bytes()),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(
            read_optical_table("energy,eps_imag\n1.0,2.0\n2.0,1.0\n".as_bytes()),
            Err(Error::Validation { row: None, .. })
        ));
        match read_optical_table("photon_energy_ev,eps_imag\n1.0,2.0\n0.5,1.0\n".as_bytes()) {
            Err(Error::Validation { row: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match read_optical_table("photon_energy_ev,eps_imag\n1.0,2.0\n2.0,abc\n".as_bytes()) {
            Err(Error::Validation { row: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn featureless_table_degenerates_to_drude() {
        let drude = DrudeParams::gold();
        let wp = drude.omega_p.0;
        let table = OpticalTable::new(vec![(1e4 * wp, 0.0), (2e4 * wp, 0.0)]).unwrap();
        let model = DielectricModel::Tabulated(
            TabulatedModel::new(table, LowFrequency::Drude(drude), 3.0).unwrap(),
        );
        for xi_ev in [1e-3, 0.051, 0.05101, 0.16, 1.0, 10.0, 100.0] {
            let xi = ev(xi_ev).unwrap();
            let tab = eps_imag_axis(&model, xi).unwrap();
            let exact = drude.eps_imag_axis(xi.0);
            assert!(rel(tab, exact) < 1e-8, "xi={xi_ev} eV: {tab} vs {exact}");
        }
    }

    #[test]
    fn plasma_low_band_is_the_delta_weight() {
        let p = PlasmaParams::gold();
        let table = OpticalTable::new(vec![(1.0e17, 0.0), (2.0e17, 0.0)]).unwrap();
        let model = DielectricModel::Tabulated(
            TabulatedModel::new(table, LowFrequency::Plasma(p), 3.0).unwrap(),
        );
        let xi = ev(0.3).unwrap();
        assert!(rel(eps_imag_axis(&model, xi).unwrap(), p.eps_imag_axis(xi.0)) < 1e-14);
        assert_eq!(
            model.static_response(),
            StaticResponse::PlasmaConductor { omega_p: p.omega_p.0 }
        );
    }

    fn lorentz_table(w0: f64, g0: f64, a: f64, n: usize) -> OpticalTable {
        let (lo, hi) = (1e-4 * w0, 1e4 * w0);
        let rows = (0..n)
            .map(|i| {
                let w = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
                (w, a * g0 * w / ((w0 * w0 - w * w).powi(2) + g0 * g0 * w * w))
            })
            .collect();
        OpticalTable::new(rows).unwrap()
    }

    #[test]
    fn lorentz_oscillator_kramers_kronig() {
        let (w0, g0) = (ev(4.0).unwrap().0, ev(1.2).unwrap().0);
        let a = 3.0 * w0 * w0;
        let model = DielectricModel::Tabulated(
            TabulatedModel::new(lorentz_table(w0, g0, a, 20_000), LowFrequency::Transparent, 3.0)
                .unwrap(),
        );
        for k in 0..=40 {
            let xi = w0 * 10f64.powf(-2.0 + 0.1 * f64::from(k));
            let exact = 1.0 + a / (w0 * w0 + xi * xi + g0 * xi);
            let got = eps_imag_axis(&model, AngularFrequency(xi)).unwrap();
            assert!(rel(got, exact) < 1e-3, "xi/w0={}: {got} vs {exact}", xi / w0);
        }
        match model.static_response() {
            StaticResponse::Dielectric { eps_static } => assert!(rel(eps_static, 4.0) < 1e-3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn power_tail_matches_closed_form() {
        // s = 3: ∫₀¹ t²/(1+β²t²) dt = (β − atan β)/β³
        let table = OpticalTable::new(vec![(1.0, 0.0), (2.0, 1.0)]).unwrap();
        let model = TabulatedModel::new(
            table,
            LowFrequency::Plasma(PlasmaParams::new(AngularFrequency(1e-30)).unwrap()),
            3.0,
        )
        .unwrap();
        for beta in [0.01, 0.5, 3.0, 40.0] {
            let xi = 2.0 * beta;
            let exact = (beta - f64::atan(beta)) / beta.powi(3);
            assert!(rel(model.tail(xi), exact) < 1e-10, "beta={beta}");
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn closed_forms_decrease_and_exceed_one(
                wp in 1e15f64..3e16, g in 1e12f64..1e15, xi in 1e11f64..1e18, f in 1.001f64..10.0
            ) {
                let d = DrudeParams::new(AngularFrequency(wp), AngularFrequency(g)).unwrap();
                let p = PlasmaParams::new(AngularFrequency(wp)).unwrap();
                prop_assert!(d.eps_imag_axis(xi) > 1.0);
                prop_assert!(p.eps_imag_axis(xi) > 1.0);
                prop_assert!(d.eps_imag_axis(f * xi) < d.eps_imag_axis(xi));
                prop_assert!(p.eps_imag_axis(f * xi) < p.eps_imag_axis(xi));
            }
        }
    }
}
