//! Sphere–plane electrostatics: the applied-bias force, the patch-potential
//! background and the parabolic force-vs-voltage calibration.
//!
//! Both forces use the PFA capacitance gradient πε₀R/d of a sphere near a
//! plane.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::EPS0;
use crate::error::{Error, Result};
use crate::linfit::weighted_least_squares;

/// Sanity bound on the minimizing potential, V.
pub const MAX_MINIMIZING_POTENTIAL: f64 = 1.0;

fn check_separation(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("separation must be positive, got {d}")))
    }
}

/// πε₀R, the coefficient shared by every electrostatic term.
pub fn capacitance_coefficient(r: f64) -> f64 {
    std::f64::consts::PI * EPS0 * r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasState {
    pub v: f64,
    pub v_m: f64,
}

impl BiasState {
    pub fn new(v: f64, v_m: f64) -> Result<Self> {
        if !(v_m.abs() <= MAX_MINIMIZING_POTENTIAL) {
            return Err(Error::domain(format!(
                "minimizing potential {v_m} V exceeds the {MAX_MINIMIZING_POTENTIAL} V sanity bound"
            )));
        }
        Ok(Self { v, v_m })
    }
}

/// πε₀R (V − V_m)² / d.
pub fn bias_force(d: f64, r: f64, v: f64, v_m: f64) -> Result<f64> {
    check_separation(d)?;
    let dv = v - v_m;
    Ok(capacitance_coefficient(r) * dv * dv / d)
}

/// πε₀R V_rms² / d · (1 + (δ/d)²).
pub fn patch_force(d: f64, r: f64, v_rms: f64, delta: f64) -> Result<f64> {
    check_separation(d)?;
    if !(delta >= 0.0) {
        return Err(Error::domain(format!("delta must be non-negative, got {delta}")));
    }
    let x = delta / d;
    Ok(capacitance_coefficient(r) * v_rms * v_rms / d * (1.0 + x * x))
}

/// Patch size relative to the separation and the interaction length √(Rd).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchRegime {
    /// λ ≪ d: exponentially small force, neglected.
    Suppressed,
    /// d ≪ λ ≪ √(Rd): the V_rms²/d law.
    Intermediate,
    /// λ ≳ √(Rd): absorbed into a separation-dependent V_m, not modelled.
    Large,
}

pub fn classify_patch_regime(lambda: f64, d: f64, r: f64) -> PatchRegime {
    let r_eff = (r * d).sqrt();
    if lambda < d / 5.0 {
        PatchRegime::Suppressed
    } else if lambda >= r_eff {
        PatchRegime::Large
    } else {
        PatchRegime::Intermediate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchModel {
    pub v_rms: f64,
    pub regime: PatchRegime,
}

impl PatchModel {
    pub fn new(v_rms: f64, regime: PatchRegime) -> Result<Self> {
        if !(v_rms >= 0.0) {
            return Err(Error::domain("V_rms must be non-negative"));
        }
        Ok(Self { v_rms, regime })
    }

    /// Force contributed in this regime; only the intermediate regime adds one.
    pub fn force(&self, d: f64, r: f64, delta: f64) -> Result<f64> {
        match self.regime {
            PatchRegime::Intermediate => patch_force(d, r, self.v_rms, delta),
            PatchRegime::Suppressed | PatchRegime::Large => {
                check_separation(d)?;
                Ok(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub v: f64,
    pub f: f64,
    pub sigma_f: f64,
}

/// Result of inverting one force-vs-voltage parabola.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    /// Separation from the curvature, d = πε₀R/c₂.
    pub d: f64,
    /// Vertex position −c₁/(2c₂).
    pub v_m: f64,
    /// Vertex value c₀ − c₁²/(4c₂): Casimir, patch and offset forces at V = V_m.
    pub f_residual: f64,
    /// Covariance of (d, V_m, F_residual).
    pub covariance: [[f64; 3]; 3],
    pub chi2: f64,
}

impl Calibration {
    pub fn sigma_d(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn sigma_v_m(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn sigma_f_residual(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }
}

/// Weighted fit of F(V) = c₂V² + c₁V + c₀ and inversion for (d, V_m, F_residual).
pub fn calibrate_from_sweep(samples: &[SweepSample], r: f64) -> Result<Calibration> {
    if samples.len() < 4 {
        return Err(Error::Arity {
            needed: 4,
            got: samples.len(),
        });
    }
    if !(r > 0.0) {
        return Err(Error::domain("sphere radius must be positive"));
    }
    // centre the voltage axis for conditioning; shifts cancel in d
    let wsum: f64 = samples.iter().map(|s| 1.0 / (s.sigma_f * s.sigma_f)).sum();
    let v0: f64 = samples
        .iter()
        .map(|s| s.v / (s.sigma_f * s.sigma_f))
        .sum::<f64>()
        / wsum;
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let u = s.v - v0;
            vec![1.0, u, u * u]
        })
        .collect();
    let y: Vec<f64> = samples.iter().map(|s| s.f).collect();
    let sigma: Vec<f64> = samples.iter().map(|s| s.sigma_f).collect();
    let fit = weighted_least_squares(&rows, &y, &sigma)?;
    let (c0, c1, c2) = (fit.coefficients[0], fit.coefficients[1], fit.coefficients[2]);
    if !(c2 > 0.0) {
        return Err(Error::Calibration(format!(
            "parabola curvature {c2:e} N/V² is not positive"
        )));
    }
    let k = capacitance_coefficient(r);
    let d = k / c2;
    let v_m = v0 - c1 / (2.0 * c2);
    let f_residual = c0 - c1 * c1 / (4.0 * c2);

    // Jacobian of (d, V_m, F_res) with respect to (c0, c1, c2)
    let jac = [
        [0.0, 0.0, -k / (c2 * c2)],
        [0.0, -1.0 / (2.0 * c2), c1 / (2.0 * c2 * c2)],
        [1.0, -c1 / (2.0 * c2), c1 * c1 / (4.0 * c2 * c2)],
    ];
    let cov = &fit.covariance;
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    acc += jac[i][a] * cov[a][b] * jac[j][b];
                }
            }
            *cell = acc;
        }
    }
    Ok(Calibration {
        d,
        v_m,
        f_residual,
        covariance: out,
        chi2: fit.chi2,
    })
}

/// Reads a sweep CSV with header `voltage_v,force_n,sigma_n`.
pub fn read_sweep_csv<R: std::io::Read>(reader: R) -> Result<Vec<SweepSample>> {
    #[derive(Deserialize)]
    struct Row {
        voltage_v: f64,
        force_n: f64,
        sigma_n: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| Error::validation(Some(i + 1), e.to_string()))?;
        if !(row.sigma_n > 0.0) {
            return Err(Error::validation(Some(i + 1), "sigma_n must be positive"));
        }
        out.push(SweepSample {
            v: row.voltage_v,
            f: row.force_n,
            sigma_f: row.sigma_n,
        });
    }
    Ok(out)
}

pub fn load_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepSample>> {
    read_sweep_csv(std::fs::File::open(path)?)
}

/// Writes samples as `voltage_v,force_n,sigma_n`.
pub fn write_sweep_csv<W: std::io::Write>(writer: W, samples: &[SweepSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["voltage_v", "force_n", "sigma_n"])?;
    for s in samples {
        w.write_record([
            format!("{:e}", s.v),
            format!("{:e}", s.f),
            format!("{:e}", s.sigma_f),
        ])?;
    }
    w.flush()?;
    Ok(())
}
