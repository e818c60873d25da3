//! Built-in scenarios: fixed configurations whose outputs are checked
//! against tolerances. A scenario returns its artifact and the list of
//! violated checks; the command line turns a non-empty list into a nonzero
//! exit status.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use crate::dwell::compare_dwell;
use crate::error::{Error, Result};
use crate::geometry::{geometry_report, resolved_grid};
use crate::params::{Params, UnitSystem};
use crate::stationary::solve_analytic;
use crate::sweep::{Format, SweepAxis, SweepSpec, SweepTable, Values, ARTIFACT_VERSION};
use crate::table::fmt_f64;
use crate::timedep::{run_transient, TransientSetup, TransientSummary};

/// Detunings of the evanescent reference sweep at `J0 = 0.01`.
pub const REFERENCE_DELTAS: [f64; 6] = [-0.05, -0.1, -0.5, -1.0, -2.0, -5.0];
pub const REFERENCE_J0: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SeparationTable,
    DwellTable,
    TransientDemo,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::SeparationTable, Scenario::DwellTable, Scenario::TransientDemo];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SeparationTable => "separation-table",
            Scenario::DwellTable => "dwell-table",
            Scenario::TransientDemo => "transient-demo",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub artifact: Vec<u8>,
    pub violations: Vec<String>,
}

pub fn run_scenario(scenario: Scenario, format: Format, seed: u64) -> Result<ScenarioOutput> {
    match scenario {
        Scenario::SeparationTable => separation_table(format, seed),
        Scenario::DwellTable => dwell_table(format),
        Scenario::TransientDemo => transient_demo(format, seed, 10_000),
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Sweep spec of the separation table.
pub fn separation_spec(seed: u64) -> SweepSpec {
    SweepSpec {
        hbar: 1.0,
        mass: 1.0,
        j0: REFERENCE_J0,
        energy: 1.0,
        v0: 3.01,
        axis: SweepAxis::Delta,
        values: Values::List(REFERENCE_DELTAS.to_vec()),
        outputs: crate::sweep::Column::ALL.to_vec(),
        grid_points: None,
        seed,
    }
}

/// Checks `v_S ~ 0`, `v > 0`, `v ~ hbar kappa / m` and the closed forms on
/// every row of an evanescent sweep table.
pub fn separation_violations(table: &SweepTable) -> Vec<String> {
    let units = table.meta.config.units();
    let mut out = Vec::new();
    for r in &table.rows {
        let tag = format!("delta/hJ0 = {}", r.delta_over_hj0);
        if let Some(e) = &r.error {
            out.push(format!("{tag}: {e}"));
            continue;
        }
        let (Some(kappa), Some(kappa_tail), Some(v), Some(vt), Some(vw), Some(vs), Some(decay)) =
            (r.kappa, r.kappa_tail, r.v_fit, r.v_theory_plus, r.v_weak, r.v_s_max_abs, r.decay_speed_tail)
        else {
            out.push(format!("{tag}: missing columns"));
            continue;
        };
        let geometric = units.hbar * kappa / units.mass;
        if vs > 1e-8 * geometric {
            out.push(format!("{tag}: max |v_S| = {vs:e} exceeds 1e-8 hbar kappa / m"));
        }
        if v <= 0.0 {
            out.push(format!("{tag}: v_fit = {v} not positive"));
        }
        if r.delta_over_hj0.abs() >= 10.0 && relative(v, geometric) > 0.01 {
            out.push(format!("{tag}: v m / (hbar kappa) off by {:.3e}", relative(v, geometric)));
        }
        if relative(decay, units.hbar * kappa_tail / units.mass) > 0.01 {
            out.push(format!("{tag}: tail decay speed off hbar kappa / m by {:.3e}", relative(decay, units.hbar * kappa_tail / units.mass)));
        }
        if relative(v, vt) > 0.005 {
            out.push(format!("{tag}: v_fit off v_theory by {:.3e}", relative(v, vt)));
        }
        if relative(v, vw) > 0.01 {
            out.push(format!("{tag}: v_fit off the weak-coupling speed by {:.3e}", relative(v, vw)));
        }
    }
    out
}

fn separation_table(format: Format, seed: u64) -> Result<ScenarioOutput> {
    let table = SweepTable::run(separation_spec(seed))?;
    let violations = separation_violations(&table);
    let mut artifact = Vec::new();
    table.emit(format, &mut artifact)?;
    Ok(ScenarioOutput { artifact, violations })
}

/// One line of the dwell-time table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DwellRow {
    pub delta: f64,
    pub energy: f64,
    pub k_in: f64,
    pub kappa: f64,
    pub n_total: f64,
    pub n_m: f64,
    pub j_in_bohm: f64,
    pub tau_bohm: f64,
    pub tau_qm: f64,
    pub tau_lambda: f64,
    pub ratio: f64,
    pub k_over_kappa: f64,
    /// The row built so that `k_in = kappa`.
    pub matched: bool,
}

impl DwellRow {
    pub const COLUMNS: [&'static str; 13] = [
        "delta",
        "E",
        "k_in",
        "kappa",
        "n_total",
        "n_m",
        "j_in_bohm",
        "tau_bohm",
        "tau_qm",
        "tau_lambda",
        "ratio",
        "k_over_kappa",
        "matched",
    ];

    fn at(params: &Params, grid: &crate::Grid, matched: bool) -> Result<Self> {
        let field = solve_analytic(params, grid)?;
        let d = compare_dwell(&field)?;
        Ok(Self {
            delta: params.delta(),
            energy: params.energy(),
            k_in: d.k_in,
            kappa: d.kappa,
            n_total: d.n_total,
            n_m: d.n_m,
            j_in_bohm: d.j_in_bohm,
            tau_bohm: d.tau_bohm,
            tau_qm: d.tau_qm,
            tau_lambda: d.tau_lambda,
            ratio: d.ratio,
            k_over_kappa: d.k_in / d.kappa,
            matched,
        })
    }

    fn cells(&self) -> Vec<String> {
        let mut v: Vec<String> = [
            self.delta,
            self.energy,
            self.k_in,
            self.kappa,
            self.n_total,
            self.n_m,
            self.j_in_bohm,
            self.tau_bohm,
            self.tau_qm,
            self.tau_lambda,
            self.ratio,
            self.k_over_kappa,
        ]
        .map(fmt_f64)
        .to_vec();
        v.push((self.matched as u8).to_string());
        v
    }
}

/// The reference sweep at `E = 1` plus one point at `delta = -2` whose
/// energy is set to `hbar^2 kappa^2 / 2m`, using the fitted `kappa`.
pub fn dwell_rows() -> Result<Vec<DwellRow>> {
    let units = UnitSystem::NATURAL;
    let mut rows = Vec::new();
    for &delta in &REFERENCE_DELTAS {
        let p = Params::with_detuning(units, REFERENCE_J0, delta, 1.0)?;
        rows.push(DwellRow::at(&p, &resolved_grid(&p)?, false)?);
    }
    let base = Params::with_detuning(units, REFERENCE_J0, -2.0, 1.0)?;
    let grid = resolved_grid(&base)?;
    let kappa = geometry_report(&solve_analytic(&base, &grid)?)?.kappa;
    let matched = Params::with_detuning(units, REFERENCE_J0, -2.0, units.kinetic_scale() * kappa * kappa)?;
    rows.push(DwellRow::at(&matched, &grid, true)?);
    Ok(rows)
}

pub fn dwell_violations(rows: &[DwellRow]) -> Vec<String> {
    let mut out = Vec::new();
    for r in rows {
        let tag = format!("delta = {}", r.delta);
        if r.tau_bohm != f64::INFINITY {
            out.push(format!("{tag}: Bohmian dwell time {} is not divergent", r.tau_bohm));
        }
        if relative(r.tau_lambda / r.tau_qm, r.k_over_kappa) > 1e-12 {
            out.push(format!("{tag}: tau_lambda / tau_qm differs from k / kappa"));
        }
        if r.matched && relative(r.tau_lambda, r.tau_qm) > 1e-12 {
            out.push(format!("{tag}: matched point tau_lambda = {} vs tau_qm = {}", r.tau_lambda, r.tau_qm));
        }
    }
    out
}

fn dwell_table(format: Format) -> Result<ScenarioOutput> {
    let rows = dwell_rows()?;
    let violations = dwell_violations(&rows);
    let mut artifact = Vec::new();
    let config = serde_json::json!({
        "scenario": Scenario::DwellTable.name(),
        "J0": REFERENCE_J0,
        "E": 1.0,
        "deltas": REFERENCE_DELTAS,
        "matched_delta": -2.0,
    });
    match format {
        Format::Csv => {
            writeln!(artifact, "# evanescent dwell table")?;
            writeln!(artifact, "# version: {ARTIFACT_VERSION}")?;
            writeln!(artifact, "# config: {config}")?;
            let mut w = csv::Writer::from_writer(&mut artifact);
            w.write_record(DwellRow::COLUMNS)?;
            for r in &rows {
                w.write_record(r.cells())?;
            }
            w.flush()?;
        }
        Format::Json => {
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let mut v = serde_json::to_value(r).expect("row serializes");
                    v["tau_bohm_divergent"] = Value::Bool(r.tau_bohm.is_infinite());
                    if r.tau_bohm.is_infinite() {
                        v["tau_bohm"] = Value::Null;
                    }
                    v
                })
                .collect();
            let doc = serde_json::json!({
                "meta": { "version": ARTIFACT_VERSION, "config": config },
                "rows": rows,
            });
            serde_json::to_writer_pretty(&mut artifact, &doc).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(artifact)?;
        }
    }
    Ok(ScenarioOutput { artifact, violations })
}

pub fn transient_violations(s: &TransientSummary) -> Vec<String> {
    let mut out = Vec::new();
    if s.n_particles > 0 {
        if !(s.penetration_fraction > 0.0) {
            out.push("no particle entered x > 0".to_string());
        }
        if s.particle_transmitted_fraction > 1e-4 {
            out.push(format!("transmitted particle fraction {:e} above 1e-4", s.particle_transmitted_fraction));
        }
        if s.crossings > 0 {
            out.push(format!("{} trajectory crossings", s.crossings));
        }
        if s.ks_distance > 0.02 {
            out.push(format!("final KS distance {} above 0.02", s.ks_distance));
        }
    }
    if s.norm_drift > 1e-7 {
        out.push(format!("norm drift {:e} above 1e-7", s.norm_drift));
    }
    if s.profile_shape_deviation > 0.02 {
        out.push(format!("late-time profile deviates by {} from the stationary shape", s.profile_shape_deviation));
    }
    match s.v_fit_profile {
        Some(v) if relative(v, s.v_fit_stationary) <= 0.02 => {}
        Some(v) => out.push(format!("profile speed {v} off the stationary {} by more than 2%", s.v_fit_stationary)),
        None => out.push("no speed fit on the late-time profile".to_string()),
    }
    out
}

/// Scalar fields of the summary as `metric,value` rows.
pub fn write_summary_csv<W: Write>(s: &TransientSummary, mut out: W) -> Result<()> {
    writeln!(out, "# evanescent transient summary")?;
    writeln!(out, "# version: {ARTIFACT_VERSION}")?;
    writeln!(out, "# setup: {}", serde_json::to_string(&s.setup).expect("setup serializes"))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "value"])?;
    let int = |v: usize| v.to_string();
    let rows: Vec<(&str, String)> = vec![
        ("seed", s.seed.to_string()),
        ("n_particles", int(s.n_particles)),
        ("penetration_fraction", fmt_f64(s.penetration_fraction)),
        ("particle_transmitted_fraction", fmt_f64(s.particle_transmitted_fraction)),
        ("final_negative_fraction", fmt_f64(s.final_negative_fraction)),
        ("transmitted_norm", fmt_f64(s.transmitted_norm)),
        ("crossings", int(s.crossings)),
        ("stopped", int(s.stopped)),
        ("ks_distance", fmt_f64(s.ks_distance)),
        ("max_excursion", fmt_f64(s.max_excursion)),
        ("norm_drift", fmt_f64(s.norm_drift)),
        ("max_continuity_residual", fmt_f64(s.max_continuity_residual)),
        ("profile_shape_deviation", fmt_f64(s.profile_shape_deviation)),
        ("v_fit_profile", s.v_fit_profile.map(fmt_f64).unwrap_or_default()),
        ("v_fit_stationary", fmt_f64(s.v_fit_stationary)),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_summary<W: Write>(s: &TransientSummary, format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Csv => write_summary_csv(s, out),
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, s).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out)?;
            Ok(())
        }
    }
}

/// Deep-evanescent packet with `width_ratio = 0.1`.
pub fn transient_demo(format: Format, seed: u64, n_particles: usize) -> Result<ScenarioOutput> {
    let setup = TransientSetup::deep_evanescent(0.1, 0.005, 0.05)?;
    let run = run_transient(&setup, n_particles, seed, 0)?;
    let violations = transient_violations(&run.summary);
    let mut artifact = Vec::new();
    emit_summary(&run.summary, format, &mut artifact)?;
    Ok(ScenarioOutput { artifact, violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!(matches!("tunnel".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn separation_table_passes() {
        let out = run_scenario(Scenario::SeparationTable, Format::Csv, 0).unwrap();
        assert!(out.violations.is_empty(), "{:?}", out.violations);
        let text = String::from_utf8(out.artifact).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + REFERENCE_DELTAS.len());
    }

    #[test]
    fn dwell_table_passes() {
        let rows = dwell_rows().unwrap();
        assert_eq!(rows.len(), REFERENCE_DELTAS.len() + 1);
        assert!(dwell_violations(&rows).is_empty(), "{:?}", dwell_violations(&rows));
        let m = rows.last().unwrap();
        assert!(m.matched && (m.k_over_kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dwell_json_marks_divergence() {
        let out = run_scenario(Scenario::DwellTable, Format::Json, 0).unwrap();
        let doc: Value = serde_json::from_slice(&out.artifact).unwrap();
        assert!(doc["rows"][0]["tau_bohm"].is_null());
        assert_eq!(doc["rows"][0]["tau_bohm_divergent"], Value::Bool(true));
    }

    #[test]
    fn violations_are_reported() {
        let mut table = SweepTable::run(separation_spec(0)).unwrap();
        table.rows[0].v_s_max_abs = Some(1.0);
        table.rows[1].error = Some("boom".into());
        let v = separation_violations(&table);
        assert_eq!(v.len(), 2);
    }
}
