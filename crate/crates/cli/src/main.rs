//! `casimir-lab`: theory curves, synthetic campaigns, fits and bands.
//!
//! Units at this boundary are µm, pN, mV and eV; the library works in SI.

mod manifest;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use casimir_lab::analysis::{
    add_correction_uncertainty, casimir_residuals, fit_patch_and_offset, fit_report,
    load_measurements, log_grid, write_measurements, ModelCurve, ModelId,
};
use casimir_lab::campaign::{run_campaign, CampaignConfig};
use casimir_lab::corrections::FluctuationSpec;
use casimir_lab::dielectric::{DielectricModel, DrudeParams, PlasmaParams};
use casimir_lab::electrostatics::{calibrate_from_sweep, load_sweep_csv, write_sweep_csv};
use casimir_lab::lifshitz::{force_curve, sensitivity_band, BandRanges, ModelFamily, QuadratureSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use manifest::{require_command, usage, RunManifest, UsageError};

const THREADS_ENV: &str = "CASIMIR_LAB_THREADS";

#[derive(Parser)]
#[command(name = "casimir-lab", version, about = "Thermal Casimir force toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sphere-plane force curve for one model or all four.
    Force(ForceArgs),
    /// Synthesize a measurement campaign and reduce it to force points.
    Simulate(SimulateArgs),
    /// Fit patch potential and offset against theory curves and rank them.
    Fit(FitArgs),
    /// Theory band over a box of Drude parameters.
    Band(BandArgs),
    /// Invert one force-vs-voltage sweep for separation and minimizing potential.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Clone, Serialize)]
struct MaterialArgs {
    /// Sphere radius, cm.
    #[arg(long, default_value_t = 15.6)]
    radius_cm: f64,
    /// Plasma frequency, eV.
    #[arg(long, default_value_t = 7.54)]
    omega_p_ev: f64,
    /// Relaxation rate, eV.
    #[arg(long, default_value_t = 0.051)]
    gamma_ev: f64,
    /// Relative tolerance of the Lifshitz quadratures.
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
}

impl MaterialArgs {
    fn radius(&self) -> Result<f64> {
        if !(self.radius_cm > 0.0) {
            return Err(usage("--radius-cm must be positive"));
        }
        Ok(self.radius_cm * 1e-2)
    }

    fn drude(&self) -> Result<DrudeParams> {
        DrudeParams::from_ev(self.omega_p_ev, self.gamma_ev).map_err(|e| usage(e.to_string()))
    }

    fn quadrature(&self) -> Result<QuadratureSpec> {
        let q = QuadratureSpec::with_rel_tol(self.rel_tol);
        q.validate().map_err(|e| usage(e.to_string()))?;
        Ok(q)
    }
}

#[derive(Args, Clone, Serialize)]
struct GridArgs {
    /// Smallest separation, µm.
    #[arg(long, default_value_t = 0.7)]
    dmin: f64,
    /// Largest separation, µm.
    #[arg(long, default_value_t = 7.0)]
    dmax: f64,
    /// Number of log-spaced separations.
    #[arg(long, default_value_t = 30)]
    points: usize,
}

impl GridArgs {
    fn separations(&self) -> Result<Vec<f64>> {
        if !(self.dmin > 0.0 && self.dmax >= self.dmin) || self.points == 0 {
            return Err(usage("need 0 < --dmin <= --dmax and --points >= 1"));
        }
        if self.points == 1 && self.dmin != self.dmax {
            return Err(usage("--points 1 needs --dmin equal to --dmax"));
        }
        Ok(log_grid(self.dmin * 1e-6, self.dmax * 1e-6, self.points)?)
    }
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ForceModel {
    Drude,
    Plasma,
    /// Perfect conductor (very large constant permittivity).
    Ideal,
}

#[derive(Args, Serialize)]
struct ForceArgs {
    #[arg(long, value_enum, default_value = "drude")]
    model: ForceModel,
    /// Temperature, K; 0 selects the zero-temperature formula.
    #[arg(long, default_value_t = 300.0)]
    temp: f64,
    /// Emit Drude300K, Plasma300K, DrudeT0 and PlasmaT0 with a leading model column.
    #[arg(long)]
    all_models: bool,
    /// rms separation fluctuation applied to the curve, nm.
    #[arg(long, default_value_t = 0.0)]
    delta_nm: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    material: MaterialArgs,
    /// Output CSV (stdout when absent).
    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Campaign configuration JSON (defaults when absent).
    #[arg(long, conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Binned measurement CSV (stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Unbinned measurement CSV, one point per record.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Directory receiving one sweep CSV per full voltage sweep.
    #[arg(long)]
    sweeps: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Measurement CSV (separation_um,force_pn,sigma_pn).
    #[arg(long)]
    data: PathBuf,
    /// Models to fit; all four when absent.
    #[arg(long = "model", value_parser = parse_model_id)]
    models: Vec<ModelId>,
    /// rms separation fluctuation, nm.
    #[arg(long, default_value_t = 40.0)]
    delta_nm: f64,
    /// Uncertainty of the fluctuation, nm.
    #[arg(long, default_value_t = 20.0)]
    delta_sigma_nm: f64,
    /// Add the correction uncertainty to every σ in quadrature.
    #[arg(long)]
    correction_sigma: bool,
    /// Write data minus fitted patch and offset (best model) to this CSV.
    #[arg(long)]
    subtract: Option<PathBuf>,
    #[command(flatten)]
    material: MaterialArgs,
    /// Report JSON (stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Family {
    Drude,
    Plasma,
}

#[derive(Args, Serialize)]
struct BandArgs {
    #[arg(long, value_enum, default_value = "drude")]
    family: Family,
    #[arg(long, default_value_t = 300.0)]
    temp: f64,
    #[arg(long, default_value_t = 6.85)]
    omega_p_min: f64,
    #[arg(long, default_value_t = 9.00)]
    omega_p_max: f64,
    #[arg(long, default_value_t = 0.02)]
    gamma_min: f64,
    #[arg(long, default_value_t = 0.061)]
    gamma_max: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 15.6)]
    radius_cm: f64,
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    /// Sweep CSV (voltage_v,force_n,sigma_n).
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long, default_value_t = 15.6)]
    radius_cm: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_model_id(s: &str) -> std::result::Result<ModelId, String> {
    s.parse::<ModelId>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<casimir_lab::Error>() {
            return match err {
                casimir_lab::Error::Convergence { .. } => 3,
                casimir_lab::Error::Rank(_) => 4,
                _ => 2,
            };
        }
    }
    1
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("{THREADS_ENV} must be a non-negative integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Force(a) => cmd_force(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Band(a) => cmd_band(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_force(a: ForceArgs) -> Result<()> {
    let grid = a.grid.separations()?;
    let r = a.material.radius()?;
    let spec = a.material.quadrature()?;
    let drude = a.material.drude()?;
    if !(a.temp >= 0.0 && a.temp.is_finite()) {
        return Err(usage("--temp must be non-negative"));
    }
    if !(a.delta_nm >= 0.0) {
        return Err(usage("--delta-nm must be non-negative"));
    }
    let fluct = FluctuationSpec::new(a.delta_nm * 1e-9, 0.0)?;

    let mut out = csv::Writer::from_writer(open_output(a.output.as_deref())?);
    let columns = ["separation_um", "force_pn", "f_times_d_pn_um", "f_times_d2_pn_um2"];
    let write_rows = |out: &mut csv::Writer<Box<dyn Write>>, label: Option<&str>, forces: &[f64]| {
        for (&d, &f) in grid.iter().zip(forces) {
            let (d_um, f_pn) = (d * 1e6, f * 1e12);
            let mut row: Vec<String> = label.map(|l| vec![l.to_string()]).unwrap_or_default();
            row.extend([d_um, f_pn, f_pn * d_um, f_pn * d_um * d_um].map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        Ok::<_, csv::Error>(())
    };

    if a.all_models {
        let mut header = vec!["model"];
        header.extend(columns);
        out.write_record(&header)?;
        for &id in &ModelId::ALL {
            let curve = ModelCurve::lifshitz(id, drude, r, fluct, spec);
            let forces = curve.forces(&grid)?;
            write_rows(&mut out, Some(curve.id.name()), &forces)?;
        }
    } else {
        out.write_record(columns)?;
        let model = match a.model {
            ForceModel::Drude => DielectricModel::Drude(drude),
            ForceModel::Plasma => DielectricModel::Plasma(PlasmaParams::new(drude.omega_p)?),
            ForceModel::Ideal => DielectricModel::ideal_metal(),
        };
        let forces = if fluct.delta > 0.0 {
            let (t, m) = (a.temp, model.clone());
            let curve = ModelCurve::from_fn(ModelId::Drude300K, fluct, move |d| {
                casimir_lab::lifshitz::casimir_force(d, t, r, &m, &spec)
            });
            curve.forces(&grid)?
        } else {
            force_curve(&grid, a.temp, r, &model, &spec)?
        };
        write_rows(&mut out, None, &forces)?;
    }
    out.flush()?;
    drop(out);

    let mut m = RunManifest::new("force", serde_json::to_value(&a)?);
    if let Some(p) = &a.output {
        m = m.output(p);
    }
    m.emit(a.output.as_deref())
}

fn load_campaign_config(a: &SimulateArgs) -> Result<(CampaignConfig, Option<PathBuf>)> {
    if let Some(path) = &a.from_manifest {
        let m = RunManifest::load(path)?;
        require_command(&m, "simulate")?;
        let cfg: CampaignConfig = serde_json::from_value(m.config)
            .map_err(|e| usage(format!("manifest config is invalid: {e}")))?;
        return Ok((cfg, Some(path.clone())));
    }
    match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(|e| usage(format!("{e:#}")))?;
            let cfg = serde_json::from_str(&text)
                .map_err(|e| usage(format!("config {} is invalid: {e}", path.display())))?;
            Ok((cfg, Some(path.clone())))
        }
        None => Ok((CampaignConfig::default(), None)),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (mut cfg, input) = load_campaign_config(&a)?;
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    let cfg = cfg.with_resolved_seed();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let truth = cfg.truth_curve()?;
    let campaign = run_campaign(&cfg, &truth)?;

    let mut m = RunManifest::new("simulate", serde_json::to_value(&cfg)?);
    m.seed = cfg.seed;
    if let Some(p) = &input {
        m = m.input(p);
    }

    let mut out = open_output(a.output.as_deref())?;
    write_measurements(&mut out, &campaign.binned)?;
    out.flush()?;
    drop(out);
    if let Some(p) = &a.output {
        m = m.output(p);
    }
    if let Some(p) = &a.raw {
        write_measurements(File::create(p)?, &campaign.reduction.points)?;
        m = m.output(p);
    }
    if let Some(dir) = &a.sweeps {
        std::fs::create_dir_all(dir)?;
        for r in campaign.records.iter().filter(|r| r.is_full_sweep()) {
            let path = dir.join(format!(
                "sweep_{:04}_{:.0}nm.csv",
                r.sweep_index,
                r.nominal_d * 1e9
            ));
            write_sweep_csv(File::create(&path)?, &r.samples)?;
        }
        m = m.output(dir);
    }
    m.emit(a.output.as_deref())
}

#[derive(Serialize)]
struct FitReport {
    n_points: usize,
    radius_m: f64,
    delta_m: f64,
    correction_sigma: bool,
    results: Vec<casimir_lab::analysis::FitReportEntry>,
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let points = load_measurements(&a.data).map_err(|e| match e {
        casimir_lab::Error::Io(_) => anyhow::Error::new(e).context(format!("reading {}", a.data.display())),
        other => usage(format!("{}: {other}", a.data.display())),
    })?;
    let r = a.material.radius()?;
    let spec = a.material.quadrature()?;
    let drude = a.material.drude()?;
    if !(a.delta_nm >= 0.0 && a.delta_sigma_nm >= 0.0) {
        return Err(usage("--delta-nm and --delta-sigma-nm must be non-negative"));
    }
    let delta = a.delta_nm * 1e-9;
    let fluct = FluctuationSpec::new(delta, a.delta_sigma_nm * 1e-9)?;
    let ids = if a.models.is_empty() {
        ModelId::ALL.to_vec()
    } else {
        a.models.clone()
    };
    let curves: Vec<ModelCurve> = ids
        .iter()
        .map(|&id| ModelCurve::lifshitz(id, drude, r, fluct, spec))
        .collect();

    let mut results = curves
        .iter()
        .map(|c| {
            let pts = if a.correction_sigma {
                add_correction_uncertainty(&points, c)?
            } else {
                points.clone()
            };
            fit_patch_and_offset(&pts, c, r, delta)
        })
        .collect::<casimir_lab::Result<Vec<_>>>()?;
    results.sort_by(|x, y| x.chi2_reduced.total_cmp(&y.chi2_reduced));

    for f in &results {
        eprintln!("{}", f.summary());
    }
    let report = FitReport {
        n_points: points.len(),
        radius_m: r,
        delta_m: delta,
        correction_sigma: a.correction_sigma,
        results: fit_report(&results),
    };
    let mut out = open_output(a.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    drop(out);

    let mut m = RunManifest::new("fit", serde_json::to_value(&a)?).input(&a.data);
    if let Some(p) = &a.output {
        m = m.output(p);
    }
    if let Some(p) = &a.subtract {
        let residuals = casimir_residuals(&points, &results[0], r, delta);
        write_measurements(File::create(p)?, &residuals)?;
        m = m.output(p);
    }
    m.emit(a.output.as_deref())
}

fn cmd_band(a: BandArgs) -> Result<()> {
    let grid = a.grid.separations()?;
    if !(a.radius_cm > 0.0) {
        return Err(usage("--radius-cm must be positive"));
    }
    if !(a.omega_p_min > 0.0 && a.gamma_min > 0.0) {
        return Err(usage("band ranges must be positive"));
    }
    if !(a.omega_p_min <= a.omega_p_max && a.gamma_min <= a.gamma_max) {
        return Err(usage("band ranges must satisfy min <= max"));
    }
    if !(a.temp >= 0.0 && a.temp.is_finite()) {
        return Err(usage("--temp must be non-negative"));
    }
    let spec = QuadratureSpec::with_rel_tol(a.rel_tol);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let ranges = BandRanges {
        omega_p_ev: (a.omega_p_min, a.omega_p_max),
        gamma_ev: (a.gamma_min, a.gamma_max),
    };
    let family = match a.family {
        Family::Drude => ModelFamily::Drude,
        Family::Plasma => ModelFamily::Plasma,
    };
    let band = sensitivity_band(&grid, a.temp, a.radius_cm * 1e-2, ranges, family, &spec)?;

    let mut out = csv::Writer::from_writer(open_output(a.output.as_deref())?);
    out.write_record(["separation_um", "f_min_pn", "f_center_pn", "f_max_pn"])?;
    for b in &band {
        out.write_record(
            [b.separation * 1e6, b.f_min * 1e12, b.f_center * 1e12, b.f_max * 1e12]
                .map(|v| v.to_string()),
        )?;
    }
    out.flush()?;
    drop(out);

    let mut m = RunManifest::new("band", serde_json::to_value(&a)?);
    if let Some(p) = &a.output {
        m = m.output(p);
    }
    m.emit(a.output.as_deref())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    if !(a.radius_cm > 0.0) {
        return Err(usage("--radius-cm must be positive"));
    }
    let samples = load_sweep_csv(&a.sweep).map_err(|e| match e {
        casimir_lab::Error::Io(_) => anyhow::Error::new(e).context(format!("reading {}", a.sweep.display())),
        other => usage(format!("{}: {other}", a.sweep.display())),
    })?;
    let cal = calibrate_from_sweep(&samples, a.radius_cm * 1e-2)?;
    let report = json!({
        "separation_um": cal.d * 1e6,
        "separation_sigma_um": cal.sigma_d() * 1e6,
        "v_m_mv": cal.v_m * 1e3,
        "v_m_sigma_mv": cal.sigma_v_m() * 1e3,
        "f_residual_pn": cal.f_residual * 1e12,
        "f_residual_sigma_pn": cal.sigma_f_residual() * 1e12,
        "chi2": cal.chi2,
        "covariance_si": cal.covariance,
    });
    let mut out = open_output(a.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    drop(out);
    let mut m = RunManifest::new("calibrate", serde_json::to_value(&a)?).input(&a.sweep);
    if let Some(p) = &a.output {
        m = m.output(p);
    }
    m.emit(a.output.as_deref())
}
