//! Command-line front end. The binary only parses arguments and maps the
//! outcome to an exit status; everything else lives here so it can be tested.
//!
//! Exit status: 0 on success, 1 on errors, 2 when a tolerance check fails or
//! `--strict` promotes a warning.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bohm::{
    ensemble_weak_average, operational_speeds, polar_decompose, weak_momentum, Axis, Boundary, GuidingField,
    Observable, WeakAverage,
};
use crate::dwell::compare_dwell;
use crate::error::{Error, Result};
use crate::geometry::{geometry_report, GeometryReport};
use crate::params::{Params, UnitSystem};
use crate::scenario::{emit_summary, run_scenario, transient_violations, Scenario};
use crate::stationary::{solve_analytic, solve_bvp_refined, TwoComponentField};
use crate::sweep::{parse_config, sweep_grid, Format, SweepTable};
use crate::table::fmt_f64;
use crate::timedep::{run_transient, TransientSetup};

#[derive(Debug, Parser)]
#[command(name = "evanescent", version, about = "Step-coupled two-waveguide scattering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config. Point commands default to hbar = m = 1, J0 = 0.01, E = 1,
    /// V0 = 3.01 (delta = -2).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Output file; standard output when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Node count of the stationary grid (extent stays automatic).
    #[arg(long, global = true, value_name = "N")]
    pub grid_points: Option<usize>,
    /// Treat failed sweep points, gap rows and run warnings as violations.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Analytic,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    SeparationTable,
    DwellTable,
    TransientDemo,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::SeparationTable => Scenario::SeparationTable,
            ScenarioArg::DwellTable => Scenario::DwellTable,
            ScenarioArg::TransientDemo => Scenario::TransientDemo,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stationary two-component field on the resolved grid.
    Solve {
        #[arg(long, value_enum, default_value_t = Method::Analytic)]
        method: Method,
    },
    /// Decay constants and speed fit of a stationary field.
    Fit {
        /// Field table written by `solve`; solved from --config when absent.
        #[arg(long, value_name = "PATH")]
        field: Option<PathBuf>,
    },
    /// Parameter sweep from a sweep config (required).
    Sweep,
    /// Weak momentum and operational speeds of psi_m on x >= 0.
    Bohm,
    /// Gaussian packet propagation with Bohmian particles.
    Propagate {
        /// Also write sampled trajectories as `particle,t,x` rows.
        #[arg(long, value_name = "PATH")]
        paths: Option<PathBuf>,
    },
    /// Bohmian, quantum and geometric dwell times.
    Dwell,
    /// Built-in checked scenario.
    Scenario {
        #[arg(value_enum)]
        name: ScenarioArg,
    },
}

/// What a command produced besides its artifact.
#[derive(Debug, Default)]
pub struct Outcome {
    pub violations: Vec<String>,
}

fn one() -> f64 {
    1.0
}
fn default_j0() -> f64 {
    0.01
}

/// Config of the single-point commands. Give at most one of `V0` and `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(rename = "J0", default = "default_j0")]
    pub j0: f64,
    #[serde(rename = "E", default = "one")]
    pub energy: f64,
    #[serde(rename = "V0", default)]
    pub v0: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Gaussian packet for the weak-value ensemble check (`bohm` only).
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
}

impl Default for PointConfig {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, j0: 0.01, energy: 1.0, v0: None, delta: None, ensemble: None }
    }
}

impl PointConfig {
    pub fn params(&self) -> Result<Params> {
        let units = UnitSystem::new(self.hbar, self.mass)?;
        match (self.v0, self.delta) {
            (Some(_), Some(_)) => {
                Err(Error::Config { path: "delta".into(), message: "give either V0 or delta, not both".into() })
            }
            (Some(v0), None) => Params::new(units, self.j0, v0, self.energy),
            (None, Some(d)) => Params::with_detuning(units, self.j0, d, self.energy),
            (None, None) => Params::new(units, self.j0, 3.01, self.energy),
        }
    }
}

fn packet_sigma() -> f64 {
    1.0
}
fn packet_k0() -> f64 {
    1.5
}
fn packet_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "packet_sigma")]
    pub sigma_x: f64,
    #[serde(default = "packet_k0")]
    pub k0: f64,
    #[serde(default = "packet_samples")]
    pub n_samples: usize,
}

fn default_delta() -> f64 {
    -2.0
}
fn default_k0() -> f64 {
    0.5
}
fn default_ratio() -> f64 {
    0.1
}
fn default_spacing() -> f64 {
    0.005
}
fn default_dt() -> f64 {
    0.05
}
fn default_particles() -> usize {
    10_000
}
fn default_paths() -> usize {
    16
}

/// Config of `propagate`. The packet width is `1 / (width_ratio kappa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateConfig {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(rename = "J0", default = "default_j0")]
    pub j0: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_k0")]
    pub k0: f64,
    #[serde(default = "default_ratio")]
    pub width_ratio: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default = "default_paths")]
    pub recorded_paths: usize,
}

/// Strict JSON parse with the failing path in the error.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config { path: e.path().to_string(), message: e.inner().to_string() })
}

fn read_config<T: for<'de> Deserialize<'de>>(path: Option<&Path>, fallback: &str) -> Result<T> {
    match path {
        Some(p) => parse_json(&fs::read_to_string(p)?),
        None => parse_json(fallback),
    }
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn point_field(cli: &Cli, config: &PointConfig) -> Result<TwoComponentField> {
    let params = config.params()?;
    solve_analytic(&params, &sweep_grid(&params, cli.grid_points)?)
}

/// Runs one command, writing its artifact to `--out` or standard output.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let format = Format::from(cli.format);
    let seed = cli.seed.unwrap_or(0);
    let config = cli.config.as_deref();
    let mut outcome = Outcome::default();
    let artifact = match &cli.command {
        Command::Solve { method } => {
            let c: PointConfig = read_config(config, "{}")?;
            let mut field = point_field(cli, &c)?;
            if *method == Method::Oracle {
                field = solve_bvp_refined(&field.params, &field.grid)?;
            }
            match format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    field.write_csv(&mut buf)?;
                    buf
                }
                Format::Json => to_json(&FieldJson::from(&field))?,
            }
        }
        Command::Fit { field } => {
            let solved = match field {
                Some(p) => TwoComponentField::read_csv(&fs::read_to_string(p)?)?,
                None => point_field(cli, &read_config(config, "{}")?)?,
            };
            let report = geometry_report(&solved)?;
            match format {
                Format::Csv => geometry_csv(&report)?,
                Format::Json => to_json(&report)?,
            }
        }
        Command::Sweep => {
            let path = config.ok_or_else(|| Error::Config { path: "--config".into(), message: "sweep needs a config file".into() })?;
            let mut spec = parse_config(&fs::read_to_string(path)?)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(n) = cli.grid_points {
                spec.grid_points = Some(n);
                spec = parse_config(&spec.to_json())?;
            }
            let table = SweepTable::run(spec)?;
            if cli.strict {
                for r in &table.rows {
                    if let Some(e) = &r.error {
                        outcome.violations.push(format!("delta/hJ0 = {}: {e}", r.delta_over_hj0));
                    }
                    if r.regime == crate::Regime::Gap {
                        outcome.violations.push(format!("delta/hJ0 = {}: gap regime", r.delta_over_hj0));
                    }
                }
            }
            let mut buf = Vec::new();
            table.emit(format, &mut buf)?;
            buf
        }
        Command::Bohm => {
            let c: PointConfig = read_config(config, "{}")?;
            let field = point_field(cli, &c)?;
            let out = bohm_output(&field, c.ensemble.as_ref(), seed)?;
            match format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    out.weak.write_csv(&mut buf)?;
                    buf
                }
                Format::Json => to_json(&out.json())?,
            }
        }
        Command::Propagate { paths } => {
            let c: PropagateConfig = read_config(config, "{}")?;
            if cli.grid_points.is_some() {
                return Err(Error::Config { path: "--grid-points".into(), message: "propagate takes `spacing` from its config".into() });
            }
            let units = UnitSystem::new(c.hbar, c.mass)?;
            let params = Params::with_detuning(units, c.j0, c.delta, units.kinetic_scale() * c.k0 * c.k0)?;
            let setup = TransientSetup::build(params, c.k0, c.width_ratio, c.spacing, c.dt)?;
            let run = run_transient(&setup, c.n_particles, seed, c.recorded_paths)?;
            if let (Some(p), Some(bundle)) = (paths, &run.bundle) {
                let mut buf = Vec::new();
                bundle.write_paths_csv(&mut buf)?;
                write_out(Some(p), &buf)?;
            }
            if cli.strict {
                outcome.violations.extend(run.summary.warnings.iter().cloned());
                outcome.violations.extend(transient_violations(&run.summary));
            }
            let mut buf = Vec::new();
            emit_summary(&run.summary, format, &mut buf)?;
            buf
        }
        Command::Dwell => {
            let c: PointConfig = read_config(config, "{}")?;
            let report = compare_dwell(&point_field(cli, &c)?)?;
            match format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    report.write_csv(&mut buf)?;
                    buf
                }
                Format::Json => {
                    let mut v = serde_json::to_value(report).map_err(|e| Error::Io(e.to_string()))?;
                    v["tau_bohm_divergent"] = report.tau_bohm_divergent().into();
                    if report.tau_bohm_divergent() {
                        v["tau_bohm"] = serde_json::Value::Null;
                    }
                    to_json(&v)?
                }
            }
        }
        Command::Scenario { name } => {
            if config.is_some() {
                return Err(Error::Config { path: "--config".into(), message: "scenarios use built-in configs".into() });
            }
            let out = run_scenario((*name).into(), format, seed)?;
            outcome.violations = out.violations;
            out.artifact
        }
    };
    write_out(cli.out.as_deref(), &artifact)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct FieldJson {
    params: Params,
    reflection: Option<Complex64>,
    x: Vec<f64>,
    psi_m: Vec<Complex64>,
    psi_a: Vec<Complex64>,
}

impl From<&TwoComponentField> for FieldJson {
    fn from(f: &TwoComponentField) -> Self {
        Self { params: f.params, reflection: f.reflection, x: f.grid.points(), psi_m: f.psi_m.clone(), psi_a: f.psi_a.clone() }
    }
}

fn geometry_csv(r: &GeometryReport) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut w = csv::Writer::from_writer(&mut buf);
    w.write_record(["kappa", "kappa_tail", "v_fit", "v_theory", "v_weak", "lambda", "fit_x_lo", "fit_x_hi", "tail_x_lo", "tail_x_hi", "fit_rms"])?;
    w.write_record(
        [r.kappa, r.kappa_tail, r.v_fit, r.v_theory, r.v_weak, r.lambda, r.fit_window.0, r.fit_window.1, r.tail_window.0, r.tail_window.1, r.fit_rms]
            .map(fmt_f64),
    )?;
    w.flush()?;
    drop(w);
    Ok(buf)
}

struct BohmOutput {
    params: Params,
    weak: crate::bohm::WeakMomentumField,
    v_s_max_abs: f64,
    ensemble: Option<(EnsembleConfig, WeakAverage)>,
}

impl BohmOutput {
    fn json(&self) -> serde_json::Value {
        let w = &self.weak;
        let x: Vec<f64> = (0..w.axis.len).map(|i| w.axis.x(i)).collect();
        let ensemble = self.ensemble.as_ref().map(|(c, a)| {
            serde_json::json!({
                "sigma_x": c.sigma_x,
                "k0": c.k0,
                "n_samples": a.n_samples,
                "mean": [a.mean.re, a.mean.im],
                "std_error": [a.std_error.0, a.std_error.1],
                "quadrature": [a.quadrature.re, a.quadrature.im],
                "deviation_in_std_errors": a.deviation_in_std_errors(),
            })
        });
        serde_json::json!({
            "params": self.params,
            "v_S_max_abs": self.v_s_max_abs,
            "x": x,
            "re_pw": w.re,
            "im_pw": w.im,
            "valid": w.valid,
            "ensemble": ensemble,
        })
    }
}

/// Free Gaussian `exp(-x^2 / 4 sigma^2 + i k0 x)` sampled on `+-10 sigma`.
pub fn gaussian_guide(sigma_x: f64, k0: f64, units: UnitSystem, n: usize) -> GuidingField {
    let half = 10.0 * sigma_x;
    let axis = Axis::new(-half, 2.0 * half / (n - 1) as f64, n);
    let psi: Vec<Complex64> = (0..n)
        .map(|i| {
            let x = axis.x(i);
            Complex64::from_polar((-x * x / (4.0 * sigma_x * sigma_x)).exp(), k0 * x)
        })
        .collect();
    GuidingField::from_components(axis, &[&psi], units, Boundary::Open)
}

fn bohm_output(field: &TwoComponentField, ensemble: Option<&EnsembleConfig>, seed: u64) -> Result<BohmOutput> {
    let o = field.grid.origin();
    let polar = polar_decompose(Axis::right_of_step(&field.grid), &field.psi_m[o..], field.params.hbar())?;
    let weak = weak_momentum(&polar);
    let v_s_max_abs = operational_speeds(&weak, field.params.units()).max_abs_v_s();
    let ensemble = match ensemble {
        Some(c) => {
            let guide = gaussian_guide(c.sigma_x, c.k0, field.params.units(), 4001);
            Some((c.clone(), ensemble_weak_average(&guide, Observable::Momentum, c.n_samples, seed)?))
        }
        None => None,
    };
    Ok(BohmOutput { params: field.params, weak, v_s_max_abs, ensemble })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("evanescent").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn all_subcommands_parse() {
        for sub in ["solve", "fit", "sweep", "bohm", "propagate", "dwell"] {
            cli(&[sub, "--format", "json", "--seed", "3", "--grid-points", "100", "--strict", "--out", "x"]);
        }
        let c = cli(&["scenario", "dwell-table", "--format", "csv"]);
        assert!(matches!(c.command, Command::Scenario { name: ScenarioArg::DwellTable }));
        assert!(Cli::try_parse_from(["evanescent", "scenario", "nope"]).is_err());
    }

    #[test]
    fn point_config_rules() {
        let c: PointConfig = parse_json(r#"{"delta": -1}"#).unwrap();
        assert!((c.params().unwrap().delta() + 1.0).abs() < 1e-12);
        assert!((PointConfig::default().params().unwrap().delta() + 2.0).abs() < 1e-12);
        let both: PointConfig = parse_json(r#"{"delta": -1, "V0": 3}"#).unwrap();
        assert!(both.params().is_err());
        assert!(parse_json::<PointConfig>(r#"{"detla": -1}"#).is_err());
        match parse_json::<PointConfig>(r#"{"ensemble": {"k0": "fast"}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "ensemble.k0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn commands_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let field = dir.path().join("field.csv");
        let f = field.to_str().unwrap();
        run(&cli(&["solve", "--out", f])).unwrap();
        let fit = dir.path().join("fit.json");
        run(&cli(&["fit", "--field", f, "--format", "json", "--out", fit.to_str().unwrap()])).unwrap();
        let report: GeometryReport = serde_json::from_slice(&fs::read(&fit).unwrap()).unwrap();
        assert!((report.v_fit - 2.0).abs() < 0.01);

        let dwell = dir.path().join("dwell.json");
        run(&cli(&["dwell", "--format", "json", "--out", dwell.to_str().unwrap()])).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&dwell).unwrap()).unwrap();
        assert_eq!(v["tau_bohm_divergent"], true);

        let cfg = dir.path().join("bohm.json");
        fs::write(&cfg, r#"{"ensemble": {"n_samples": 2000}}"#).unwrap();
        let bohm = dir.path().join("bohm_out.json");
        run(&cli(&["bohm", "--config", cfg.to_str().unwrap(), "--format", "json", "--out", bohm.to_str().unwrap()])).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&bohm).unwrap()).unwrap();
        assert!(v["v_S_max_abs"].as_f64().unwrap() < 1e-8);
        assert!(v["ensemble"]["deviation_in_std_errors"].as_f64().unwrap() < 5.0);
    }

    #[test]
    fn strict_sweep_flags_gap() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("s.json");
        fs::write(&cfg, r#"{"axis": "delta_over_hJ0", "values": [-5, 0]}"#).unwrap();
        let out = dir.path().join("s.csv");
        let base = ["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        assert!(run(&cli(&base)).unwrap().violations.is_empty());
        let strict: Vec<&str> = base.iter().copied().chain(["--strict"]).collect();
        assert_eq!(run(&cli(&strict)).unwrap().violations.len(), 1);
    }

    #[test]
    fn sweep_requires_config() {
        assert!(matches!(run(&cli(&["sweep"])), Err(Error::Config { .. })));
    }
}
