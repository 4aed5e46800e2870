//! Binning, the patch-plus-offset fit against a theory curve, and ranking of
//! competing theory curves by reduced χ².

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrections::{correction_uncertainty, fluctuation_corrected_force, FluctuationSpec};
use crate::dielectric::{DielectricModel, DrudeParams, PlasmaParams};
use crate::electrostatics::capacitance_coefficient;
use crate::error::{Error, Result};
use crate::lifshitz::{casimir_force, ModelFamily, QuadratureSpec};
use crate::linfit::weighted_least_squares;

/// Temperature of the thermal theory curves, K.
pub const ROOM_TEMPERATURE: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPoint {
    /// Separation, m.
    pub d: f64,
    /// Force, N.
    pub f: f64,
    pub sigma: f64,
}

impl MeasurementPoint {
    pub fn new(d: f64, f: f64, sigma: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::domain(format!("separation must be positive, got {d}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        if !f.is_finite() {
            return Err(Error::domain("force must be finite"));
        }
        Ok(Self { d, f, sigma })
    }
}

/// The four competing theory curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    Drude300K,
    Plasma300K,
    DrudeT0,
    PlasmaT0,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [
        ModelId::Drude300K,
        ModelId::Plasma300K,
        ModelId::DrudeT0,
        ModelId::PlasmaT0,
    ];

    pub fn family(self) -> ModelFamily {
        match self {
            ModelId::Drude300K | ModelId::DrudeT0 => ModelFamily::Drude,
            ModelId::Plasma300K | ModelId::PlasmaT0 => ModelFamily::Plasma,
        }
    }

    pub fn temperature(self) -> f64 {
        match self {
            ModelId::Drude300K | ModelId::Plasma300K => ROOM_TEMPERATURE,
            ModelId::DrudeT0 | ModelId::PlasmaT0 => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Drude300K => "Drude300K",
            ModelId::Plasma300K => "Plasma300K",
            ModelId::DrudeT0 => "DrudeT0",
            ModelId::PlasmaT0 => "PlasmaT0",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "drude300k" | "drude300" => ModelId::Drude300K,
            "plasma300k" | "plasma300" => ModelId::Plasma300K,
            "drudet0" | "drude0k" | "drude0" => ModelId::DrudeT0,
            "plasmat0" | "plasma0k" | "plasma0" => ModelId::PlasmaT0,
            _ => return Err(Error::domain(format!("unknown model id '{s}'"))),
        })
    }
}

type ForceFn = dyn Fn(f64) -> Result<f64> + Send + Sync;

/// A theory force curve d ↦ F, fluctuation-corrected on evaluation.
#[derive(Clone)]
pub struct ModelCurve {
    pub id: ModelId,
    pub fluctuation: FluctuationSpec,
    raw: Arc<ForceFn>,
}

impl fmt::Debug for ModelCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelCurve")
            .field("id", &self.id)
            .field("fluctuation", &self.fluctuation)
            .finish_non_exhaustive()
    }
}

impl ModelCurve {
    /// Wraps an arbitrary uncorrected force law.
    pub fn from_fn<F>(id: ModelId, fluctuation: FluctuationSpec, raw: F) -> Self
    where
        F: Fn(f64) -> Result<f64> + Send + Sync + 'static,
    {
        Self {
            id,
            fluctuation,
            raw: Arc::new(raw),
        }
    }

    /// Lifshitz sphere–plane force for `id` with the given Drude parameters
    /// (the plasma curves use only ω_p).
    pub fn lifshitz(
        id: ModelId,
        drude: DrudeParams,
        radius: f64,
        fluctuation: FluctuationSpec,
        spec: QuadratureSpec,
    ) -> Self {
        let model = match id.family() {
            ModelFamily::Drude => DielectricModel::Drude(drude),
            ModelFamily::Plasma => DielectricModel::Plasma(PlasmaParams {
                omega_p: drude.omega_p,
            }),
        };
        let t = id.temperature();
        Self::from_fn(id, fluctuation, move |d| casimir_force(d, t, radius, &model, &spec))
    }

    /// The four gold curves.
    pub fn gold_set(radius: f64, fluctuation: FluctuationSpec, spec: QuadratureSpec) -> Vec<Self> {
        ModelId::ALL
            .iter()
            .map(|&id| Self::lifshitz(id, DrudeParams::gold(), radius, fluctuation, spec))
            .collect()
    }

    /// Uncorrected force, N.
    pub fn raw(&self, d: f64) -> Result<f64> {
        (self.raw)(d)
    }

    /// Fluctuation-corrected force, N.
    pub fn force(&self, d: f64) -> Result<f64> {
        fluctuation_corrected_force(&*self.raw, d, self.fluctuation.delta)
    }

    /// Uncertainty of the fluctuation correction at `d`, N.
    pub fn correction_sigma(&self, d: f64) -> Result<f64> {
        correction_uncertainty(&*self.raw, d, self.fluctuation)
    }

    /// Corrected forces at every separation, each distinct value evaluated once.
    pub fn forces(&self, separations: &[f64]) -> Result<Vec<f64>> {
        let mut unique: Vec<f64> = Vec::new();
        let mut index: HashMap<u64, usize> = HashMap::new();
        for &d in separations {
            index.entry(d.to_bits()).or_insert_with(|| {
                unique.push(d);
                unique.len() - 1
            });
        }
        let values = unique
            .par_iter()
            .map(|&d| self.force(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(separations
            .iter()
            .map(|d| values[index[&d.to_bits()]])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub model_id: ModelId,
    /// V_rms², V². May be negative when the model demands it.
    pub v_rms_sq: f64,
    /// Force offset, N.
    pub a: f64,
    /// Covariance of (v_rms_sq, a) in V⁴, V²·N, N².
    pub covariance: [[f64; 2]; 2],
    pub chi2_reduced: f64,
    pub n_points: usize,
}

impl FitResult {
    /// V_rms in volts, undefined for a negative fitted square.
    pub fn v_rms(&self) -> Option<f64> {
        (self.v_rms_sq >= 0.0).then(|| self.v_rms_sq.sqrt())
    }

    pub fn sigma_v_rms_sq(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn sigma_a(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    /// Propagated σ of V_rms, when defined and non-zero.
    pub fn sigma_v_rms(&self) -> Option<f64> {
        self.v_rms()
            .filter(|v| *v > 0.0)
            .map(|v| self.sigma_v_rms_sq() / (2.0 * v))
    }

    /// One-line summary in mV and pN.
    pub fn summary(&self) -> String {
        let v = match self.v_rms() {
            Some(v) => format!("{:.2} mV", v * 1e3),
            None => "undefined".to_string(),
        };
        format!(
            "{}: best fit V_rms = {v}, a = {:.2} pN, reduced chi2 = {:.3}",
            self.model_id,
            self.a * 1e12,
            self.chi2_reduced
        )
    }
}

/// (πε₀R/d)(1 + (δ/d)²), the patch basis function.
pub fn patch_basis(d: f64, r: f64, delta: f64) -> f64 {
    let x = delta / d;
    capacitance_coefficient(r) / d * (1.0 + x * x)
}

fn distinct_separations(points: &[MeasurementPoint]) -> usize {
    let mut ds: Vec<u64> = points.iter().map(|p| p.d.to_bits()).collect();
    ds.sort_unstable();
    ds.dedup();
    ds.len()
}

/// Fits F − curve(d) = V_rms² (πε₀R/d)(1+(δ/d)²) + a by weighted least squares.
pub fn fit_patch_and_offset(
    points: &[MeasurementPoint],
    curve: &ModelCurve,
    r: f64,
    delta: f64,
) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::Arity {
            needed: 3,
            got: points.len(),
        });
    }
    if distinct_separations(points) < 2 {
        return Err(Error::Rank(
            "all points share one separation; patch and offset terms are degenerate".into(),
        ));
    }
    let ds: Vec<f64> = points.iter().map(|p| p.d).collect();
    let theory = curve.forces(&ds)?;
    let rows: Vec<Vec<f64>> = ds.iter().map(|&d| vec![patch_basis(d, r, delta), 1.0]).collect();
    let y: Vec<f64> = points.iter().zip(&theory).map(|(p, t)| p.f - t).collect();
    let sigma: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let fit = weighted_least_squares(&rows, &y, &sigma)?;
    let c = &fit.covariance;
    Ok(FitResult {
        model_id: curve.id,
        v_rms_sq: fit.coefficients[0],
        a: fit.coefficients[1],
        covariance: [[c[0][0], c[0][1]], [c[1][0], c[1][1]]],
        chi2_reduced: fit.chi2 / (points.len() - 2) as f64,
        n_points: points.len(),
    })
}

/// Independent fits per curve, ranked by ascending reduced χ² (stable).
pub fn discriminate_models(
    points: &[MeasurementPoint],
    curves: &[ModelCurve],
    r: f64,
    delta: f64,
) -> Result<Vec<FitResult>> {
    let mut results = curves
        .par_iter()
        .map(|c| fit_patch_and_offset(points, c, r, delta))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.chi2_reduced.total_cmp(&b.chi2_reduced));
    Ok(results)
}

/// Adds the theory curve's correction uncertainty to every σ in quadrature.
pub fn add_correction_uncertainty(
    points: &[MeasurementPoint],
    curve: &ModelCurve,
) -> Result<Vec<MeasurementPoint>> {
    points
        .iter()
        .map(|p| {
            let s = curve.correction_sigma(p.d)?;
            Ok(MeasurementPoint {
                sigma: p.sigma.hypot(s),
                ..*p
            })
        })
        .collect()
}

/// Data minus fitted patch and offset terms: the Casimir force alone.
pub fn casimir_residuals(
    points: &[MeasurementPoint],
    fit: &FitResult,
    r: f64,
    delta: f64,
) -> Vec<MeasurementPoint> {
    points
        .iter()
        .map(|p| MeasurementPoint {
            f: p.f - fit.v_rms_sq * patch_basis(p.d, r, delta) - fit.a,
            ..*p
        })
        .collect()
}

/// `n` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::domain(format!("grid bounds must satisfy 0 < lo <= hi, got {lo}, {hi}")));
    }
    match n {
        0 => Err(Error::Arity { needed: 1, got: 0 }),
        1 => Ok(vec![lo]),
        _ => {
            let step = (hi / lo).ln() / (n - 1) as f64;
            Ok((0..n)
                .map(|i| match i {
                    0 => lo,
                    i if i == n - 1 => hi,
                    i => lo * (step * i as f64).exp(),
                })
                .collect())
        }
    }
}

/// Bin edges centred (geometrically) on the points of [`log_grid`].
pub fn log_bin_edges(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Arity { needed: 2, got: n });
    }
    let grid = log_grid(lo, hi, n)?;
    let half = ((hi / lo).ln() / (2 * (n - 1)) as f64).exp();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(lo / half);
    edges.extend(grid.windows(2).map(|w| (w[0] * w[1]).sqrt()));
    edges.push(hi * half);
    Ok(edges)
}

/// Inverse-variance weighted average per bin; empty bins are dropped.
/// Bins are half-open except the last, which includes its upper edge.
pub fn bin_points(points: &[MeasurementPoint], edges: &[f64]) -> Result<Vec<MeasurementPoint>> {
    if edges.len() < 2 {
        return Err(Error::Arity {
            needed: 2,
            got: edges.len(),
        });
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("bin edges must be strictly increasing"));
    }
    let nbins = edges.len() - 1;
    // (Σw, Σw·d, Σw·F)
    let mut acc = vec![(0.0, 0.0, 0.0); nbins];
    for p in points {
        let last = edges[nbins];
        if !(p.d >= edges[0] && p.d <= last) {
            return Err(Error::Assignment(format!(
                "separation {:e} m lies outside [{:e}, {:e}]",
                p.d, edges[0], last
            )));
        }
        let bin = if p.d == last {
            nbins - 1
        } else {
            edges.partition_point(|&e| e <= p.d) - 1
        };
        let w = 1.0 / (p.sigma * p.sigma);
        let a = &mut acc[bin];
        a.0 += w;
        a.1 += w * p.d;
        a.2 += w * p.f;
    }
    Ok(acc
        .into_iter()
        .filter(|a| a.0 > 0.0)
        .map(|(w, wd, wf)| MeasurementPoint {
            d: wd / w,
            f: wf / w,
            sigma: w.sqrt().recip(),
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRow {
    separation_um: f64,
    force_pn: f64,
    sigma_pn: f64,
}

/// Reads `separation_um,force_pn,sigma_pn` and converts to SI.
pub fn read_measurements<R: std::io::Read>(reader: R) -> Result<Vec<MeasurementPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["separation_um", "force_pn", "sigma_pn"] {
        return Err(Error::validation(
            None,
            "expected header separation_um,force_pn,sigma_pn",
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<MeasurementRow>().enumerate() {
        let row = rec.map_err(|e| Error::validation(Some(i + 1), e.to_string()))?;
        let p = MeasurementPoint::new(row.separation_um * 1e-6, row.force_pn * 1e-12, row.sigma_pn * 1e-12)
            .map_err(|e| Error::validation(Some(i + 1), e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

pub fn load_measurements(path: impl AsRef<Path>) -> Result<Vec<MeasurementPoint>> {
    read_measurements(std::fs::File::open(path)?)
}

pub fn write_measurements<W: std::io::Write>(writer: W, points: &[MeasurementPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(MeasurementRow {
            separation_um: p.d * 1e6,
            force_pn: p.f * 1e12,
            sigma_pn: p.sigma * 1e12,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One entry of the JSON fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportEntry {
    pub rank: usize,
    pub model_id: ModelId,
    pub v_rms_mv: Option<f64>,
    pub v_rms_sigma_mv: Option<f64>,
    pub a_pn: f64,
    pub a_sigma_pn: f64,
    pub chi2_reduced: f64,
    pub n_points: usize,
    /// Covariance of (V_rms², a) in SI.
    pub cov_v_rms_sq_v_rms_sq: f64,
    pub cov_v_rms_sq_a: f64,
    pub cov_a_a: f64,
    pub summary: String,
}

impl FitReportEntry {
    pub fn from_fit(rank: usize, fit: &FitResult) -> Self {
        Self {
            rank,
            model_id: fit.model_id,
            v_rms_mv: fit.v_rms().map(|v| v * 1e3),
            v_rms_sigma_mv: fit.sigma_v_rms().map(|v| v * 1e3),
            a_pn: fit.a * 1e12,
            a_sigma_pn: fit.sigma_a() * 1e12,
            chi2_reduced: fit.chi2_reduced,
            n_points: fit.n_points,
            cov_v_rms_sq_v_rms_sq: fit.covariance[0][0],
            cov_v_rms_sq_a: fit.covariance[0][1],
            cov_a_a: fit.covariance[1][1],
            summary: fit.summary(),
        }
    }
}

/// Ranked report entries, rank 1 first.
pub fn fit_report(results: &[FitResult]) -> Vec<FitReportEntry> {
    results
        .iter()
        .enumerate()
        .map(|(i, f)| FitReportEntry::from_fit(i + 1, f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const R: f64 = 0.156;
    const V_RMS: f64 = 5.4e-3;
    const A: f64 = -3.0e-12;

    fn cubic(id: ModelId, k: f64) -> ModelCurve {
        ModelCurve::from_fn(id, FluctuationSpec::NONE, move |d| Ok(k / (d * d * d)))
    }

    fn grid() -> Vec<f64> {
        log_grid(0.7e-6, 7e-6, 30).unwrap()
    }

    fn synthetic(curve: &ModelCurve, noise: Option<(u64, f64)>) -> Vec<MeasurementPoint> {
        let mut rng = noise.map(|(seed, _)| ChaCha8Rng::seed_from_u64(seed));
        grid()
            .into_iter()
            .map(|d| {
                let mut f = curve.force(d).unwrap() + V_RMS * V_RMS * patch_basis(d, R, 0.0) + A;
                let mut sigma = 1e-12;
                if let (Some(rng), Some((_, s))) = (rng.as_mut(), noise) {
                    let z: f64 = StandardNormal.sample(rng);
                    f += s * z;
                    sigma = s;
                }
                MeasurementPoint { d, f, sigma }
            })
            .collect()
    }

    #[test]
    fn model_ids_parse_and_display() {
        for id in ModelId::ALL {
            assert_eq!(id.name().parse::<ModelId>().unwrap(), id);
        }
        assert_eq!("drude-300k".parse::<ModelId>().unwrap(), ModelId::Drude300K);
        assert_eq!("plasma_t0".parse::<ModelId>().unwrap(), ModelId::PlasmaT0);
        assert!("lorentz".parse::<ModelId>().is_err());
        assert_eq!(serde_json::to_string(&ModelId::DrudeT0).unwrap(), "\"DrudeT0\"");
    }

    #[test]
    fn exact_recovery() {
        let curve = cubic(ModelId::Drude300K, 4e-28);
        let fit = fit_patch_and_offset(&synthetic(&curve, None), &curve, R, 0.0).unwrap();
        assert!(((fit.v_rms_sq - V_RMS * V_RMS) / (V_RMS * V_RMS)).abs() < 1e-9);
        assert!((fit.a - A).abs() < 1e-20);
        assert!(fit.chi2_reduced < 1e-12);
        assert!((fit.v_rms().unwrap() - V_RMS).abs() < 1e-10);
    }

    #[test]
    fn zero_residuals_give_zero_parameters() {
        let curve = cubic(ModelId::Drude300K, 4e-28);
        let points: Vec<_> = grid()
            .into_iter()
            .map(|d| MeasurementPoint { d, f: curve.force(d).unwrap(), sigma: 1e-12 })
            .collect();
        let fit = fit_patch_and_offset(&points, &curve, R, 40e-9).unwrap();
        assert!(fit.v_rms_sq.abs() < 1e-15);
        assert!(fit.a.abs() < 1e-24);
    }

    #[test]
    fn negative_square_leaves_v_rms_undefined() {
        let curve = cubic(ModelId::Drude300K, 4e-28);
        let points: Vec<_> = grid()
            .into_iter()
            .map(|d| MeasurementPoint {
                d,
                f: curve.force(d).unwrap() - 1e-5 * patch_basis(d, R, 0.0),
                sigma: 1e-12,
            })
            .collect();
        let fit = fit_patch_and_offset(&points, &curve, R, 0.0).unwrap();
        assert!(fit.v_rms_sq < 0.0);
        assert_eq!(fit.v_rms(), None);
        assert!(fit.summary().contains("undefined"));
    }

    #[test]
    fn single_separation_is_rank_deficient() {
        let curve = cubic(ModelId::Drude300K, 4e-28);
        let points = vec![MeasurementPoint { d: 1e-6, f: 1e-10, sigma: 1e-12 }; 5];
        assert!(matches!(fit_patch_and_offset(&points, &curve, R, 0.0), Err(Error::Rank(_))));
        assert!(matches!(
            fit_patch_and_offset(&points[..2], &curve, R, 0.0),
            Err(Error::Arity { .. })
        ));
    }

    #[test]
    fn noisy_fits_over_seeds() {
        let curve = cubic(ModelId::Drude300K, 4e-28);
        let (mut chi_ok, mut par_ok) = (0, 0);
        for seed in 0..100 {
            let fit =
                fit_patch_and_offset(&synthetic(&curve, Some((seed, 1e-12))), &curve, R, 0.0).unwrap();
            if (0.5..=1.6).contains(&fit.chi2_reduced) {
                chi_ok += 1;
            }
            if (fit.a - A).abs() <= 3.0 * fit.sigma_a()
                && (fit.v_rms_sq - V_RMS * V_RMS).abs() <= 3.0 * fit.sigma_v_rms_sq()
            {
                par_ok += 1;
            }
        }
        // χ²₂₈/28 lies in [0.5, 1.6] with probability ≈ 0.96
        assert!(chi_ok >= 90, "{chi_ok}");
        assert!(par_ok >= 95, "{par_ok}");
    }

    #[test]
    fn ranking_and_ties() {
        let truth = cubic(ModelId::Drude300K, 4e-28);
        let points = synthetic(&truth, Some((7, 1e-12)));
        let curves = vec![
            cubic(ModelId::PlasmaT0, 4.4e-28),
            cubic(ModelId::DrudeT0, 4.2e-28),
            truth.clone(),
            cubic(ModelId::Plasma300K, 4.6e-28),
        ];
        let ranked = discriminate_models(&points, &curves, R, 0.0).unwrap();
        assert_eq!(ranked[0].model_id, ModelId::Drude300K);
        assert!(ranked.windows(2).all(|w| w[0].chi2_reduced <= w[1].chi2_reduced));

        let ties: Vec<_> = ModelId::ALL.iter().map(|&id| cubic(id, 4e-28)).collect();
        let ranked = discriminate_models(&points, &ties, R, 0.0).unwrap();
        let ids: Vec<_> = ranked.iter().map(|f| f.model_id).collect();
        assert_eq!(ids, ModelId::ALL);
        assert!(ranked.iter().all(|f| f.chi2_reduced == ranked[0].chi2_reduced));
    }

    #[test]
    fn binning_basics() {
        let p = |d: f64, f: f64, s: f64| MeasurementPoint { d, f, sigma: s };
        let edges = [1.0, 2.0, 3.0, 4.0];
        let pts = vec![p(1.5, 10.0, 1.0), p(2.5, 20.0, 2.0), p(3.5, 30.0, 0.5)];
        assert_eq!(bin_points(&pts, &edges).unwrap(), pts);

        let pair = vec![p(1.2, 4.0, 2.0), p(1.8, 6.0, 2.0)];
        let b = bin_points(&pair, &edges).unwrap();
        assert_eq!(b.len(), 1);
        assert!((b[0].f - 5.0).abs() < 1e-15);
        assert!((b[0].d - 1.5).abs() < 1e-15);
        assert!((b[0].sigma - 2.0 / 2f64.sqrt()).abs() < 1e-15);

        // last edge is inclusive
        assert_eq!(bin_points(&[p(4.0, 1.0, 1.0)], &edges).unwrap().len(), 1);
        assert!(matches!(bin_points(&[p(4.5, 1.0, 1.0)], &edges), Err(Error::Assignment(_))));
        assert!(matches!(bin_points(&[p(0.5, 1.0, 1.0)], &edges), Err(Error::Assignment(_))));
        assert!(bin_points(&pts, &[1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn grid_and_edges() {
        let g = grid();
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 0.7e-6);
        assert_eq!(g[29], 7e-6);
        let edges = log_bin_edges(0.7e-6, 7e-6, 30).unwrap();
        assert_eq!(edges.len(), 31);
        for (i, d) in g.iter().enumerate() {
            assert!(edges[i] < *d && *d < edges[i + 1]);
        }
        assert_eq!(log_grid(1.0, 1.0, 1).unwrap(), vec![1.0]);
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn measurement_csv_round_trip() {
        let pts = vec![
            MeasurementPoint { d: 0.7e-6, f: 1.25e-9, sigma: 1e-12 },
            MeasurementPoint { d: 7e-6, f: -2.5e-12, sigma: 0.5e-12 },
        ];
        let mut buf = Vec::new();
        write_measurements(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("separation_um,force_pn,sigma_pn\n"));
        assert!(text.ends_with('\n'));
        let back = read_measurements(buf.as_slice()).unwrap();
        for (a, b) in pts.iter().zip(&back) {
            assert!(((a.d - b.d) / a.d).abs() < 1e-15);
            assert!(((a.f - b.f) / a.f).abs() < 1e-15);
        }
        let bad = "separation_um,force_pn,sigma_pn\n1.0,2.0,0.1\n-1.0,2.0,0.1\n";
        match read_measurements(bad.as_bytes()) {
            Err(Error::Validation { row: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(read_measurements("d,f,s\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn report_entries() {
        let curve = cubic(ModelId::Drude300K, 4e-28);
        let fit = fit_patch_and_offset(&synthetic(&curve, None), &curve, R, 0.0).unwrap();
        let report = fit_report(&[fit]);
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json[0]["model_id"], "Drude300K");
        assert_eq!(json[0]["rank"], 1);
        assert!((json[0]["v_rms_mv"].as_f64().unwrap() - 5.4).abs() < 1e-6);
        assert!((json[0]["a_pn"].as_f64().unwrap() + 3.0).abs() < 1e-6);
    }

    #[test]
    fn correction_uncertainty_inflates_sigma() {
        let curve = ModelCurve::from_fn(
            ModelId::Drude300K,
            FluctuationSpec::new(40e-9, 20e-9).unwrap(),
            |d| Ok(4e-28 / (d * d * d)),
        );
        let pts = synthetic(&cubic(ModelId::Drude300K, 4e-28), None);
        let inflated = add_correction_uncertainty(&pts, &curve).unwrap();
        assert!(inflated.iter().zip(&pts).all(|(a, b)| a.sigma > b.sigma));
        assert!(inflated[0].sigma / pts[0].sigma > inflated[29].sigma / pts[29].sigma);
    }

    proptest! {
        #[test]
        fn fit_is_linear_in_residuals(c in -5.0f64..5.0) {
            let zero = cubic(ModelId::Drude300K, 0.0);
            let base: Vec<_> = grid().into_iter().enumerate().map(|(i, d)| MeasurementPoint {
                d,
                f: V_RMS * V_RMS * patch_basis(d, R, 0.0) + A + 1e-13 * (i as f64).sin(),
                sigma: 1e-12,
            }).collect();
            let scaled: Vec<_> = base.iter().map(|p| MeasurementPoint { f: c * p.f, ..*p }).collect();
            let f1 = fit_patch_and_offset(&base, &zero, R, 0.0).unwrap();
            let f2 = fit_patch_and_offset(&scaled, &zero, R, 0.0).unwrap();
            prop_assert!((f2.v_rms_sq - c * f1.v_rms_sq).abs() <= 1e-9 * f1.v_rms_sq.abs());
            prop_assert!((f2.a - c * f1.a).abs() <= 1e-9 * f1.a.abs());
        }

        #[test]
        fn offset_shift_leaves_chi2(shift in -1e-10f64..1e-10, seed in 0u64..1000) {
            let curve = cubic(ModelId::Drude300K, 4e-28);
            let pts = synthetic(&curve, Some((seed, 1e-12)));
            let moved: Vec<_> = pts.iter().map(|p| MeasurementPoint { f: p.f + shift, ..*p }).collect();
            let a = fit_patch_and_offset(&pts, &curve, R, 0.0).unwrap();
            let b = fit_patch_and_offset(&moved, &curve, R, 0.0).unwrap();
            prop_assert!((b.a - a.a - shift).abs() < 1e-9 * (1e-12 + shift.abs()));
            prop_assert!((b.chi2_reduced - a.chi2_reduced).abs() < 1e-6 * (1.0 + a.chi2_reduced));
        }

        #[test]
        fn chi2_is_order_independent(seed in 0u64..1000, rot in 1usize..29) {
            let curve = cubic(ModelId::Drude300K, 4e-28);
            let pts = synthetic(&curve, Some((seed, 1e-12)));
            let mut shuffled = pts.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            let a = fit_patch_and_offset(&pts, &curve, R, 0.0).unwrap();
            let b = fit_patch_and_offset(&shuffled, &curve, R, 0.0).unwrap();
            prop_assert!((a.chi2_reduced - b.chi2_reduced).abs() < 1e-9 * a.chi2_reduced);
        }
    }
}
