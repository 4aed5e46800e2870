//! Synthetic measurement campaign and its reduction to force-vs-separation
//! points.
//!
//! A campaign visits every separation of a log-spaced grid once per sweep.
//! At the two end separations the bias is swept and the parabola is recorded;
//! in between a single reading is taken with the bias held at the minimizing
//! potential. All randomness comes from one seeded ChaCha stream drawn in
//! schedule order.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{bin_points, log_bin_edges, log_grid, MeasurementPoint, ModelCurve, ModelId};
use crate::corrections::{corrected_separation, effective_capacitive_separation, FluctuationSpec};
use crate::dielectric::{DrudeParams, GOLD_GAMMA_EV, GOLD_OMEGA_P_EV};
use crate::electrostatics::{
    bias_force, calibrate_from_sweep, patch_force, Calibration, SweepSample,
    MAX_MINIMIZING_POTENTIAL,
};
use crate::error::{Error, Result};
use crate::lifshitz::{QuadratureSpec, PENDULUM_RADIUS};

/// σ assigned to readings when the configured noise is zero, N.
pub const SIGMA_FLOOR: f64 = 1e-15;

/// Campaign description. Fields are SI except the two Drude parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub n_separations: usize,
    pub n_sweeps: usize,
    pub sweep_voltages: Vec<f64>,
    pub truth_model: ModelId,
    pub omega_p_ev: f64,
    pub gamma_ev: f64,
    pub radius: f64,
    pub v_rms_true: f64,
    pub v_m_true: f64,
    /// Change of the minimizing potential from d_min to d_max, V (linear in ln d).
    pub v_m_variation: f64,
    pub offset_a_true: f64,
    pub noise_sigma: f64,
    /// Linear drift, N per sweep.
    pub drift_rate: f64,
    pub delta_true: f64,
    pub rel_tol: f64,
    pub seed: Option<u64>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            d_min: 0.7e-6,
            d_max: 7e-6,
            n_separations: 30,
            n_sweeps: 383,
            sweep_voltages: (-5..=5).map(|i| f64::from(i) / 100.0).collect(),
            truth_model: ModelId::Drude300K,
            omega_p_ev: GOLD_OMEGA_P_EV,
            gamma_ev: GOLD_GAMMA_EV,
            radius: PENDULUM_RADIUS,
            v_rms_true: 5.4e-3,
            v_m_true: 0.02,
            v_m_variation: 0.0,
            offset_a_true: -3.0e-12,
            noise_sigma: 1e-12,
            drift_rate: 0.0,
            delta_true: 40e-9,
            rel_tol: QuadratureSpec::default().rel_tol,
            seed: None,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(None, m));
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return bad(format!("need 0 < d_min < d_max, got {} and {}", self.d_min, self.d_max));
        }
        if self.n_separations < 2 {
            return bad("n_separations must be at least 2".into());
        }
        if self.n_sweeps < 1 {
            return bad("n_sweeps must be at least 1".into());
        }
        let mut volts = self.sweep_voltages.clone();
        volts.sort_by(f64::total_cmp);
        volts.dedup();
        if volts.len() < 4 || volts.len() != self.sweep_voltages.len() {
            return bad("sweep_voltages needs at least 4 distinct values".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(self.radius > 0.0) {
            return bad("radius must be positive".into());
        }
        if !(self.v_rms_true >= 0.0) {
            return bad("v_rms_true must be non-negative".into());
        }
        if !(self.v_m_true.abs() <= MAX_MINIMIZING_POTENTIAL) {
            return bad("v_m_true exceeds the 1 V sanity bound".into());
        }
        if !(self.delta_true >= 0.0 && self.d_min > 5.0 * self.delta_true) {
            return bad("delta_true must be non-negative and below d_min / 5".into());
        }
        if !self.drift_rate.is_finite() || !self.offset_a_true.is_finite() {
            return bad("drift_rate and offset_a_true must be finite".into());
        }
        self.drude()?;
        self.quadrature().validate()
    }

    pub fn drude(&self) -> Result<DrudeParams> {
        DrudeParams::from_ev(self.omega_p_ev, self.gamma_ev)
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::with_rel_tol(self.rel_tol)
    }

    pub fn separations(&self) -> Result<Vec<f64>> {
        log_grid(self.d_min, self.d_max, self.n_separations)
    }

    pub fn fluctuation(&self) -> FluctuationSpec {
        FluctuationSpec {
            delta: self.delta_true,
            delta_sigma: 0.0,
        }
    }

    /// Lifshitz curve of the configured truth model.
    pub fn truth_curve(&self) -> Result<ModelCurve> {
        Ok(ModelCurve::lifshitz(
            self.truth_model,
            self.drude()?,
            self.radius,
            self.fluctuation(),
            self.quadrature(),
        ))
    }

    /// Minimizing potential at separation `d`.
    pub fn v_m_at(&self, d: f64) -> f64 {
        let x = (d / self.d_min).ln() / (self.d_max / self.d_min).ln();
        self.v_m_true + self.v_m_variation * x
    }

    /// Returns a copy with the seed fixed, drawing one from entropy if absent.
    pub fn with_resolved_seed(&self) -> Self {
        let mut c = self.clone();
        c.seed.get_or_insert_with(rand::random::<u64>);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub nominal_d: f64,
    pub samples: Vec<SweepSample>,
    pub sweep_index: usize,
}

impl SweepRecord {
    pub fn is_full_sweep(&self) -> bool {
        self.samples.len() > 1
    }
}

/// Draws the raw readings for `config` with `truth` as the Casimir force.
///
/// The configuration must carry a seed.
pub fn generate_records(config: &CampaignConfig, truth: &ModelCurve) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let seed = config
        .seed
        .ok_or_else(|| Error::validation(None, "campaign seed is not set"))?;
    let grid = config.separations()?;
    let casimir = truth.forces(&grid)?;
    // static part of every reading and the capacitive gap, per separation
    let statics = grid
        .iter()
        .zip(&casimir)
        .map(|(&d, &fc)| {
            let patch = patch_force(d, config.radius, config.v_rms_true, config.delta_true)?;
            let d_cap = effective_capacitive_separation(d, config.delta_true)?;
            Ok((fc + patch + config.offset_a_true, d_cap))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = config.noise_sigma.max(SIGMA_FLOOR);
    let last = grid.len() - 1;
    let mut records = Vec::with_capacity(config.n_sweeps * grid.len());
    for k in 0..config.n_sweeps {
        let drift = config.drift_rate * k as f64;
        for (j, &d) in grid.iter().enumerate() {
            let (base, d_cap) = statics[j];
            let v_m = config.v_m_at(d);
            let voltages: &[f64] = if j == 0 || j == last {
                &config.sweep_voltages
            } else {
                std::slice::from_ref(&config.v_m_true)
            };
            let samples = voltages
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let f = base
                        + bias_force(d_cap, config.radius, v, v_m)?
                        + drift
                        + config.noise_sigma * z;
                    Ok(SweepSample { v, f, sigma_f: sigma })
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(SweepRecord {
                nominal_d: d,
                samples,
                sweep_index: k,
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftEstimate {
    /// Removed slope, N per sweep.
    pub slope: f64,
    pub slope_sigma: f64,
}

/// Removes a linear-in-sweep-index drift estimated by a regression pooled over
/// groups of identical conditions (separation and bias).
pub fn subtract_drift(records: &[SweepRecord]) -> Result<(Vec<SweepRecord>, DriftEstimate)> {
    let mut indices: Vec<usize> = records.iter().map(|r| r.sweep_index).collect();
    indices.sort_unstable();
    indices.dedup();
    if indices.len() < 2 {
        return Err(Error::Arity {
            needed: 2,
            got: indices.len(),
        });
    }
    // (Σw, Σw·k, Σw·F) per condition
    let mut groups: BTreeMap<(u64, u64), (f64, f64, f64)> = BTreeMap::new();
    for r in records {
        for s in &r.samples {
            let w = 1.0 / (s.sigma_f * s.sigma_f);
            let g = groups.entry((r.nominal_d.to_bits(), s.v.to_bits())).or_default();
            g.0 += w;
            g.1 += w * r.sweep_index as f64;
            g.2 += w * s.f;
        }
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in records {
        for s in &r.samples {
            let g = groups[&(r.nominal_d.to_bits(), s.v.to_bits())];
            let w = 1.0 / (s.sigma_f * s.sigma_f);
            let dk = r.sweep_index as f64 - g.1 / g.0;
            sxy += w * dk * (s.f - g.2 / g.0);
            sxx += w * dk * dk;
        }
    }
    if !(sxx > 0.0) {
        return Err(Error::Rank("no condition was repeated across sweeps".into()));
    }
    let slope = sxy / sxx;
    let cleaned = records
        .iter()
        .map(|r| SweepRecord {
            samples: r
                .samples
                .iter()
                .map(|s| SweepSample {
                    f: s.f - slope * r.sweep_index as f64,
                    ..*s
                })
                .collect(),
            ..r.clone()
        })
        .collect();
    Ok((
        cleaned,
        DriftEstimate {
            slope,
            slope_sigma: sxx.sqrt().recip(),
        },
    ))
}

/// Calibration of one full sweep at an end separation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndCalibration {
    pub sweep_index: usize,
    pub nominal_d: f64,
    /// Capacitive separation corrected for fluctuations, m.
    pub corrected_d: f64,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reduction {
    /// One point per record.
    pub points: Vec<MeasurementPoint>,
    pub calibrations: Vec<EndCalibration>,
    /// Added to every nominal separation, m.
    pub separation_offset: f64,
    pub separation_offset_sigma: f64,
    /// Weighted mean of the calibrated minimizing potentials, V.
    pub v_m: f64,
}

/// Turns drift-free records into force-vs-separation points.
///
/// Every full sweep is inverted for (d, V_m, F at V_m). The calibrated
/// separations, corrected for fluctuations, fix the offset between nominal
/// and true separations by an inverse-variance mean; nominal separations are
/// then shifted by it. Full sweeps contribute their vertex force, single
/// readings contribute themselves.
pub fn reduce_campaign(records: &[SweepRecord], radius: f64, delta: f64) -> Result<Reduction> {
    let calibrations = records
        .par_iter()
        .filter(|r| r.is_full_sweep())
        .map(|r| {
            let cal = calibrate_from_sweep(&r.samples, radius)?;
            Ok(EndCalibration {
                sweep_index: r.sweep_index,
                nominal_d: r.nominal_d,
                corrected_d: corrected_separation(cal.d, delta)?,
                calibration: cal,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if calibrations.is_empty() {
        return Err(Error::Calibration("campaign contains no full voltage sweep".into()));
    }
    let (mut w_sum, mut wo_sum, mut wv_sum, mut wv_w) = (0.0, 0.0, 0.0, 0.0);
    for c in &calibrations {
        let cal = &c.calibration;
        // dd/dd_inferred = 1 − (δ/d)²; close enough to 1 for weighting
        let w = 1.0 / cal.covariance[0][0].max(1e-300);
        w_sum += w;
        wo_sum += w * (c.corrected_d - c.nominal_d);
        let wv = 1.0 / cal.covariance[1][1].max(1e-300);
        wv_w += wv;
        wv_sum += wv * cal.v_m;
    }
    let offset = wo_sum / w_sum;

    let mut by_key: BTreeMap<(usize, u64), &EndCalibration> = BTreeMap::new();
    for c in &calibrations {
        by_key.insert((c.sweep_index, c.nominal_d.to_bits()), c);
    }
    let points = records
        .iter()
        .map(|r| {
            let d = r.nominal_d + offset;
            if r.is_full_sweep() {
                let c = by_key[&(r.sweep_index, r.nominal_d.to_bits())];
                let cal = &c.calibration;
                MeasurementPoint::new(d, cal.f_residual, cal.sigma_f_residual().max(SIGMA_FLOOR))
            } else {
                let s = &r.samples[0];
                MeasurementPoint::new(d, s.f, s.sigma_f)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Reduction {
        points,
        calibrations,
        separation_offset: offset,
        separation_offset_sigma: w_sum.sqrt().recip(),
        v_m: wv_sum / wv_w,
    })
}

/// Everything produced by one campaign.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub config: CampaignConfig,
    pub records: Vec<SweepRecord>,
    pub drift: DriftEstimate,
    pub reduction: Reduction,
    /// Reduced points binned onto the separation grid.
    pub binned: Vec<MeasurementPoint>,
}

impl Campaign {
    pub fn seed(&self) -> u64 {
        self.config.seed.expect("campaign seed is resolved on generation")
    }
}

/// Generates records, removes drift and reduces them; the binned points use
/// one bin per grid separation.
pub fn run_campaign(config: &CampaignConfig, truth: &ModelCurve) -> Result<Campaign> {
    let config = config.with_resolved_seed();
    let records = generate_records(&config, truth)?;
    let (clean, drift) = if config.n_sweeps >= 2 {
        subtract_drift(&records)?
    } else {
        (
            records.clone(),
            DriftEstimate {
                slope: 0.0,
                slope_sigma: f64::INFINITY,
            },
        )
    };
    let reduction = reduce_campaign(&clean, config.radius, config.delta_true)?;
    let edges = log_bin_edges(
        config.d_min + reduction.separation_offset,
        config.d_max + reduction.separation_offset,
        config.n_separations,
    )?;
    let binned = bin_points(&reduction.points, &edges)?;
    Ok(Campaign {
        config,
        records,
        drift,
        reduction,
        binned,
    })
}

/// [`run_campaign`] with the configured Lifshitz truth curve.
pub fn generate_campaign(config: &CampaignConfig) -> Result<Campaign> {
    config.validate()?;
    run_campaign(config, &config.truth_curve()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrostatics::bias_force;

    fn toy_truth() -> ModelCurve {
        ModelCurve::from_fn(ModelId::Drude300K, FluctuationSpec::NONE, |d| Ok(4.2e-28 / (d * d * d)))
    }

    fn small(seed: u64) -> CampaignConfig {
        CampaignConfig {
            n_sweeps: 20,
            n_separations: 8,
            seed: Some(seed),
            ..Default::default()
        }
    }

    #[test]
    fn default_config_round_trips_json() {
        let c = CampaignConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CampaignConfig>(&json).unwrap(), c);
        let partial: CampaignConfig = serde_json::from_str(r#"{"seed": 7, "n_sweeps": 10}"#).unwrap();
        assert_eq!(partial.n_sweeps, 10);
        assert_eq!(partial.seed, Some(7));
        assert!(serde_json::from_str::<CampaignConfig>(r#"{"n_sweep": 10}"#).is_err());
        assert_eq!(c.sweep_voltages.len(), 11);
        assert!((c.sweep_voltages[0] + 0.05).abs() < 1e-15 && (c.sweep_voltages[10] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let ok = CampaignConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            CampaignConfig { d_min: 8e-6, ..ok.clone() },
            CampaignConfig { n_separations: 1, ..ok.clone() },
            CampaignConfig { noise_sigma: -1.0, ..ok.clone() },
            CampaignConfig { sweep_voltages: vec![0.0, 0.01, 0.02], ..ok.clone() },
            CampaignConfig { delta_true: 0.2e-6, ..ok.clone() },
            CampaignConfig { v_m_true: 2.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn noiseless_readings_equal_the_analytic_sum() {
        let cfg = CampaignConfig {
            noise_sigma: 0.0,
            ..small(1)
        };
        let truth = toy_truth();
        let records = generate_records(&cfg, &truth).unwrap();
        assert_eq!(records.len(), 20 * 8);
        for r in &records {
            let d = r.nominal_d;
            let d_cap = effective_capacitive_separation(d, cfg.delta_true).unwrap();
            for s in &r.samples {
                let want = truth.force(d).unwrap()
                    + patch_force(d, cfg.radius, cfg.v_rms_true, cfg.delta_true).unwrap()
                    + bias_force(d_cap, cfg.radius, s.v, cfg.v_m_true).unwrap()
                    + cfg.offset_a_true;
                assert!((s.f - want).abs() <= 1e-15 * want.abs(), "{} vs {want}", s.f);
            }
            assert_eq!(r.samples.len(), if r.is_full_sweep() { 11 } else { 1 });
        }
        let intermediate = records.iter().find(|r| !r.is_full_sweep()).unwrap();
        assert_eq!(intermediate.samples[0].v, cfg.v_m_true);
    }

    #[test]
    fn same_seed_same_records() {
        let truth = toy_truth();
        let a = generate_records(&small(42), &truth).unwrap();
        let b = generate_records(&small(42), &truth).unwrap();
        assert_eq!(a, b);
        let c = generate_records(&small(43), &truth).unwrap();
        assert_ne!(a, c);
        assert!(generate_records(&CampaignConfig { seed: None, ..small(1) }, &truth).is_err());
    }

    #[test]
    fn noiseless_drift_is_recovered_exactly() {
        let cfg = CampaignConfig {
            noise_sigma: 0.0,
            drift_rate: 0.01e-12,
            ..small(3)
        };
        let records = generate_records(&cfg, &toy_truth()).unwrap();
        let (clean, est) = subtract_drift(&records).unwrap();
        assert!(((est.slope - 0.01e-12) / 0.01e-12).abs() < 1e-10, "{}", est.slope);
        let no_drift = generate_records(&CampaignConfig { drift_rate: 0.0, ..cfg }, &toy_truth()).unwrap();
        for (a, b) in clean.iter().zip(&no_drift) {
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert!((x.f - y.f).abs() < 1e-22);
            }
        }
        assert!(matches!(subtract_drift(&records[..8]), Err(Error::Arity { .. })));
    }

    #[test]
    fn zero_drift_slope_consistent_with_zero() {
        let truth = toy_truth();
        let mut inside = 0;
        for seed in 0..100 {
            let records = generate_records(&small(seed), &truth).unwrap();
            let (_, est) = subtract_drift(&records).unwrap();
            if est.slope.abs() <= 3.0 * est.slope_sigma {
                inside += 1;
            }
        }
        assert!(inside >= 98, "{inside}");
    }

    #[test]
    fn noiseless_reduction_closes() {
        let cfg = CampaignConfig {
            noise_sigma: 0.0,
            ..small(5)
        };
        let truth = toy_truth();
        let c = run_campaign(&cfg, &truth).unwrap();
        let red = &c.reduction;
        assert!(red.separation_offset.abs() < 1e-15, "{}", red.separation_offset);
        assert!((red.v_m - cfg.v_m_true).abs() < 1e-4);
        for cal in &red.calibrations {
            assert!(((cal.corrected_d - cal.nominal_d) / cal.nominal_d).abs() < 1e-9);
        }
        let grid = cfg.separations().unwrap();
        for (p, d) in c.binned.iter().zip(&grid) {
            let want = truth.force(*d).unwrap()
                + patch_force(*d, cfg.radius, cfg.v_rms_true, cfg.delta_true).unwrap()
                + cfg.offset_a_true;
            assert!((p.f - want).abs() < 1e-18, "{} vs {want}", p.f);
        }
        assert_eq!(c.binned.len(), 8);
    }

    #[test]
    fn binned_sigma_shrinks_with_count() {
        let truth = toy_truth();
        let cfg = CampaignConfig {
            n_sweeps: 383,
            ..small(11)
        };
        let c = run_campaign(&cfg, &truth).unwrap();
        let inner = &c.binned[3];
        let expect = cfg.noise_sigma / (383f64).sqrt();
        assert!(((inner.sigma - expect) / expect).abs() < 0.1);
    }

    #[test]
    fn entropy_seed_is_recorded() {
        let cfg = CampaignConfig { seed: None, ..small(0) };
        let resolved = cfg.with_resolved_seed();
        assert!(resolved.seed.is_some());
        let again = resolved.with_resolved_seed();
        assert_eq!(again.seed, resolved.seed);
    }
}
