//! Parameter sweeps over the detuning and the tables they produce.
//!
//! A sweep is configured by a JSON document (see [`SweepSpec`]), evaluated
//! point by point in parallel and emitted as CSV or JSON. Both formats carry
//! the config echo, the crate version and the numerical tolerances so that a
//! table can be regenerated exactly.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bohm::{operational_speeds, polar_decompose, weak_momentum, Axis, AMPLITUDE_MASK};
use crate::dwell::{compare_dwell, dwell_bohmian, ZERO_CURRENT_TOLERANCE};
use crate::error::{Error, Result};
use crate::geometry::{geometry_report, resolved_grid, TAIL_LOWER, TAIL_UPPER, WINDOW_FRACTION};
use crate::grid::Grid;
use crate::params::{Params, Regime, UnitSystem};
use crate::stationary::{
    max_relative_deviation, solve_analytic, solve_bvp_refined, ORACLE_MAX_KH, ORACLE_TAIL_LIMIT,
};
use crate::table::{fmt_opt, parse_opt};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Smallest accepted `grid_points` override.
pub const MIN_GRID_POINTS: usize = 16;

/// Quantity varied along the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Detuning `delta`; `V0` follows from `E` and `J0`.
    #[serde(rename = "delta")]
    Delta,
    /// Detuning in units of `hbar J0`.
    #[serde(rename = "delta_over_hJ0")]
    DeltaOverHj0,
    /// Incident energy at fixed `V0`.
    #[serde(rename = "E")]
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

/// Explicit list or generated range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    Range(RangeSpec),
}

impl Values {
    pub fn expand(&self) -> Result<Vec<f64>> {
        let bad = |message: String| Error::Config { path: "values".into(), message };
        match self {
            Values::List(v) => Ok(v.clone()),
            Values::Range(r) => {
                if r.count == 0 {
                    return Err(bad("count must be positive".into()));
                }
                if r.count == 1 {
                    return Ok(vec![r.start]);
                }
                let n = (r.count - 1) as f64;
                match r.spacing {
                    Spacing::Linear => {
                        Ok((0..r.count).map(|i| r.start + (r.stop - r.start) * i as f64 / n).collect())
                    }
                    Spacing::Geometric => {
                        if !(r.start * r.stop > 0.0) {
                            return Err(bad("geometric spacing needs start and stop of the same sign".into()));
                        }
                        let ratio = r.stop / r.start;
                        Ok((0..r.count).map(|i| r.start * ratio.powf(i as f64 / n)).collect())
                    }
                }
            }
        }
    }
}

/// Output columns, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "delta_over_hJ0")]
    DeltaOverHj0,
    #[serde(rename = "regime")]
    Regime,
    #[serde(rename = "kappa")]
    Kappa,
    #[serde(rename = "v_fit")]
    VFit,
    #[serde(rename = "v_theory_plus")]
    VTheoryPlus,
    #[serde(rename = "v_weak")]
    VWeak,
    #[serde(rename = "v_S_max_abs")]
    VSMaxAbs,
    #[serde(rename = "tau_lambda")]
    TauLambda,
    #[serde(rename = "tau_qm")]
    TauQm,
    #[serde(rename = "tau_bohm")]
    TauBohm,
    #[serde(rename = "fit_rms")]
    FitRms,
    #[serde(rename = "oracle_disagreement")]
    OracleDisagreement,
    #[serde(rename = "kappa_tail")]
    KappaTail,
    #[serde(rename = "decay_speed_tail")]
    DecaySpeedTail,
    #[serde(rename = "error")]
    Error,
}

impl Column {
    pub const ALL: [Column; 15] = [
        Column::DeltaOverHj0,
        Column::Regime,
        Column::Kappa,
        Column::VFit,
        Column::VTheoryPlus,
        Column::VWeak,
        Column::VSMaxAbs,
        Column::TauLambda,
        Column::TauQm,
        Column::TauBohm,
        Column::FitRms,
        Column::OracleDisagreement,
        Column::KappaTail,
        Column::DecaySpeedTail,
        Column::Error,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::DeltaOverHj0 => "delta_over_hJ0",
            Column::Regime => "regime",
            Column::Kappa => "kappa",
            Column::VFit => "v_fit",
            Column::VTheoryPlus => "v_theory_plus",
            Column::VWeak => "v_weak",
            Column::VSMaxAbs => "v_S_max_abs",
            Column::TauLambda => "tau_lambda",
            Column::TauQm => "tau_qm",
            Column::TauBohm => "tau_bohm",
            Column::FitRms => "fit_rms",
            Column::OracleDisagreement => "oracle_disagreement",
            Column::KappaTail => "kappa_tail",
            Column::DecaySpeedTail => "decay_speed_tail",
            Column::Error => "error",
        }
    }

    pub fn from_name(name: &str) -> Option<Column> {
        Column::ALL.into_iter().find(|c| c.name() == name)
    }
}

fn one() -> f64 {
    1.0
}
fn default_j0() -> f64 {
    0.01
}
fn default_v0() -> f64 {
    3.01
}
fn all_columns() -> Vec<Column> {
    Column::ALL.to_vec()
}

/// Sweep configuration. Unknown keys are rejected.
///
/// Defaults: `hbar = 1`, `mass = 1`, `J0 = 0.01`, `E = 1`, `V0 = 3.01`
/// (so `delta = -2` at the defaults), every column, the automatically
/// resolved grid and seed 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(rename = "J0", default = "default_j0")]
    pub j0: f64,
    #[serde(rename = "E", default = "one")]
    pub energy: f64,
    /// Ignored on the detuning axes, where `V0` is derived per point.
    #[serde(rename = "V0", default = "default_v0")]
    pub v0: f64,
    pub axis: SweepAxis,
    pub values: Values,
    #[serde(default = "all_columns")]
    pub outputs: Vec<Column>,
    /// Total node count of the stationary grid; the extent stays automatic.
    #[serde(default)]
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SweepSpec {
    pub fn units(&self) -> UnitSystem {
        UnitSystem { hbar: self.hbar, mass: self.mass }
    }

    /// Parameter sets in input order.
    pub fn points(&self) -> Result<Vec<Params>> {
        let values = self.values.expand()?;
        if values.is_empty() {
            return Err(Error::Config { path: "values".into(), message: "must not be empty".into() });
        }
        let units = UnitSystem::new(self.hbar, self.mass).map_err(config_error)?;
        // base parameters are validated even when the axis overrides them
        Params::new(units, self.j0, self.v0, self.energy).map_err(config_error)?;
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let p = match self.axis {
                    SweepAxis::Delta => Params::with_detuning(units, self.j0, v, self.energy),
                    SweepAxis::DeltaOverHj0 => Params::with_detuning(units, self.j0, v * self.hbar * self.j0, self.energy),
                    SweepAxis::Energy => Params::new(units, self.j0, self.v0, v),
                };
                p.map_err(|e| Error::Config { path: format!("values[{i}]"), message: e.to_string() })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => Error::Config { path: field.into(), message: reason },
        other => other,
    }
}

/// Parses and validates a sweep config. Type errors carry the JSON path.
pub fn parse_config(text: &str) -> Result<SweepSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: SweepSpec = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &SweepSpec) -> Result<()> {
    if spec.outputs.is_empty() {
        return Err(Error::Config { path: "outputs".into(), message: "must select at least one column".into() });
    }
    for (i, c) in spec.outputs.iter().enumerate() {
        if spec.outputs[..i].contains(c) {
            return Err(Error::Config { path: format!("outputs[{i}]"), message: format!("duplicate column {}", c.name()) });
        }
    }
    if let Some(n) = spec.grid_points {
        if n < MIN_GRID_POINTS {
            return Err(Error::Config {
                path: "grid_points".into(),
                message: format!("need at least {MIN_GRID_POINTS}, got {n}"),
            });
        }
    }
    spec.points().map(|_| ())
}

/// One sweep point. Cells that do not apply to the regime, or whose
/// computation failed, are empty; failures are collected in `error`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta_over_hj0: f64,
    pub regime: Regime,
    pub kappa: Option<f64>,
    pub v_fit: Option<f64>,
    pub v_theory_plus: Option<f64>,
    pub v_weak: Option<f64>,
    pub v_s_max_abs: Option<f64>,
    pub tau_lambda: Option<f64>,
    pub tau_qm: Option<f64>,
    pub tau_bohm: Option<f64>,
    pub fit_rms: Option<f64>,
    pub oracle_disagreement: Option<f64>,
    pub kappa_tail: Option<f64>,
    pub decay_speed_tail: Option<f64>,
    pub error: Option<String>,
}

enum Cell<'a> {
    Num(Option<f64>),
    Text(Option<&'a str>),
}

impl SweepRow {
    fn blank(params: &Params) -> Self {
        Self {
            delta_over_hj0: params.delta_over_hj0(),
            regime: params.classify(),
            kappa: None,
            v_fit: None,
            v_theory_plus: None,
            v_weak: None,
            v_s_max_abs: None,
            tau_lambda: None,
            tau_qm: None,
            tau_bohm: None,
            fit_rms: None,
            oracle_disagreement: None,
            kappa_tail: None,
            decay_speed_tail: None,
            error: None,
        }
    }

    fn cell(&self, c: Column) -> Cell<'_> {
        use Cell::*;
        match c {
            Column::DeltaOverHj0 => Num(Some(self.delta_over_hj0)),
            Column::Regime => Text(Some(self.regime.as_str())),
            Column::Kappa => Num(self.kappa),
            Column::VFit => Num(self.v_fit),
            Column::VTheoryPlus => Num(self.v_theory_plus),
            Column::VWeak => Num(self.v_weak),
            Column::VSMaxAbs => Num(self.v_s_max_abs),
            Column::TauLambda => Num(self.tau_lambda),
            Column::TauQm => Num(self.tau_qm),
            Column::TauBohm => Num(self.tau_bohm),
            Column::FitRms => Num(self.fit_rms),
            Column::OracleDisagreement => Num(self.oracle_disagreement),
            Column::KappaTail => Num(self.kappa_tail),
            Column::DecaySpeedTail => Num(self.decay_speed_tail),
            Column::Error => Text(self.error.as_deref()),
        }
    }

    fn num_mut(&mut self, c: Column) -> Option<&mut Option<f64>> {
        Some(match c {
            Column::Kappa => &mut self.kappa,
            Column::VFit => &mut self.v_fit,
            Column::VTheoryPlus => &mut self.v_theory_plus,
            Column::VWeak => &mut self.v_weak,
            Column::VSMaxAbs => &mut self.v_s_max_abs,
            Column::TauLambda => &mut self.tau_lambda,
            Column::TauQm => &mut self.tau_qm,
            Column::TauBohm => &mut self.tau_bohm,
            Column::FitRms => &mut self.fit_rms,
            Column::OracleDisagreement => &mut self.oracle_disagreement,
            Column::KappaTail => &mut self.kappa_tail,
            Column::DecaySpeedTail => &mut self.decay_speed_tail,
            _ => return None,
        })
    }

    fn empty_for_reading() -> Self {
        Self {
            delta_over_hj0: f64::NAN,
            regime: Regime::Gap,
            kappa: None,
            v_fit: None,
            v_theory_plus: None,
            v_weak: None,
            v_s_max_abs: None,
            tau_lambda: None,
            tau_qm: None,
            tau_bohm: None,
            fit_rms: None,
            oracle_disagreement: None,
            kappa_tail: None,
            decay_speed_tail: None,
            error: None,
        }
    }

    pub fn tau_bohm_divergent(&self) -> bool {
        self.tau_bohm == Some(f64::INFINITY)
    }
}

fn parse_regime(s: &str) -> Result<Regime> {
    [Regime::Evanescent, Regime::Gap, Regime::Propagating]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| Error::Table(format!("unknown regime `{s}`")))
}

/// Stationary grid for a sweep point: the resolved grid, or its extent
/// re-sampled with `grid_points` nodes.
pub fn sweep_grid(params: &Params, grid_points: Option<usize>) -> Result<Grid> {
    let auto = resolved_grid(params)?;
    let Some(n) = grid_points else { return Ok(auto) };
    if n < MIN_GRID_POINTS {
        return Err(Error::InvalidGrid(format!("need at least {MIN_GRID_POINTS} points, got {n}")));
    }
    let spacing = (auto.x_max() - auto.x_min()) / (n - 1) as f64;
    let n_left = ((-auto.x_min() / spacing).round() as usize).clamp(1, n - 2);
    Grid::from_cells(spacing, n_left, n - 1 - n_left)
}

/// Solves one point and fills every applicable column.
pub fn evaluate_point(params: &Params, grid_points: Option<usize>) -> SweepRow {
    let mut row = SweepRow::blank(params);
    let mut errors = Vec::new();
    let field = match sweep_grid(params, grid_points).and_then(|g| solve_analytic(params, &g)) {
        Ok(f) => f,
        Err(e) => {
            row.error = Some(format!("solve: {e}"));
            return row;
        }
    };
    match solve_bvp_refined(params, &field.grid) {
        Ok(oracle) => row.oracle_disagreement = Some(max_relative_deviation(&field, &oracle)),
        Err(e) => errors.push(format!("oracle: {e}")),
    }
    let o = field.grid.origin();
    let speeds = polar_decompose(Axis::right_of_step(&field.grid), &field.psi_m[o..], params.hbar())
        .map(|polar| operational_speeds(&weak_momentum(&polar), params.units()));
    match &speeds {
        Ok(s) => row.v_s_max_abs = Some(s.max_abs_v_s()),
        Err(e) => errors.push(format!("weak value: {e}")),
    }

    if row.regime == Regime::Evanescent {
        match geometry_report(&field) {
            Ok(g) => {
                row.kappa = Some(g.kappa);
                row.kappa_tail = Some(g.kappa_tail);
                row.v_fit = Some(g.v_fit);
                row.v_theory_plus = Some(g.v_theory);
                row.v_weak = Some(g.v_weak);
                row.fit_rms = Some(g.fit_rms);
                if let Ok(s) = &speeds {
                    let h = field.grid.spacing();
                    let (lo, hi) = g.tail_window;
                    let tail: Vec<f64> = (0..s.v_s.len())
                        .filter(|&i| s.valid[i] && (lo..=hi).contains(&(i as f64 * h)))
                        .map(|i| s.decay_speed[i])
                        .collect();
                    if !tail.is_empty() {
                        row.decay_speed_tail = Some(tail.iter().sum::<f64>() / tail.len() as f64);
                    }
                }
            }
            Err(e) => errors.push(format!("geometry: {e}")),
        }
        match compare_dwell(&field) {
            Ok(d) => {
                row.tau_lambda = Some(d.tau_lambda);
                row.tau_qm = Some(d.tau_qm);
                row.tau_bohm = Some(d.tau_bohm);
            }
            Err(e) => errors.push(format!("dwell: {e}")),
        }
    } else {
        row.tau_bohm = Some(dwell_bohmian(&field));
    }
    if !errors.is_empty() {
        row.error = Some(errors.join("; "));
    }
    row
}

/// Evaluates every point concurrently; rows come back in input order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let points = spec.points()?;
    Ok(points.par_iter().map(|p| evaluate_point(p, spec.grid_points)).collect())
}

/// Numerical thresholds recorded with every table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub oracle_max_kh: f64,
    pub oracle_tail_limit: f64,
    pub speed_window_fraction: f64,
    pub tail_upper: f64,
    pub tail_lower: f64,
    pub amplitude_mask: f64,
    pub zero_current: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle_max_kh: ORACLE_MAX_KH,
            oracle_tail_limit: ORACLE_TAIL_LIMIT,
            speed_window_fraction: WINDOW_FRACTION,
            tail_upper: TAIL_UPPER,
            tail_lower: TAIL_LOWER,
            amplitude_mask: AMPLITUDE_MASK,
            zero_current: ZERO_CURRENT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepMeta {
    pub version: String,
    pub config: SweepSpec,
    pub tolerances: Tolerances,
}

impl SweepMeta {
    pub fn new(config: SweepSpec) -> Self {
        Self { version: ARTIFACT_VERSION.to_string(), config, tolerances: Tolerances::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Rows plus the metadata needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub meta: SweepMeta,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn run(spec: SweepSpec) -> Result<Self> {
        let rows = run_sweep(&spec)?;
        Ok(Self { meta: SweepMeta::new(spec), rows })
    }

    pub fn columns(&self) -> &[Column] {
        &self.meta.config.outputs
    }

    pub fn emit<W: Write>(&self, format: Format, out: W) -> Result<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json => self.write_json(out),
        }
    }

    /// Comment block (`# version`, `# config`, `# tolerances`), header and
    /// one line per row. Divergent times are written as `inf`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Table("no rows to emit".into()));
        }
        writeln!(out, "# evanescent sweep table")?;
        writeln!(out, "# version: {}", self.meta.version)?;
        writeln!(out, "# config: {}", self.meta.config.to_json())?;
        writeln!(out, "# tolerances: {}", serde_json::to_string(&self.meta.tolerances).expect("serializes"))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns().iter().map(|c| c.name()))?;
        for row in &self.rows {
            w.write_record(self.columns().iter().map(|&c| match row.cell(c) {
                Cell::Num(v) => fmt_opt(v),
                Cell::Text(t) => t.unwrap_or_default().to_string(),
            }))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"meta": ..., "rows": [...]}`. Every row object has the same keys;
    /// a divergent `tau_bohm` is `null` with `"tau_bohm_divergent": true`.
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Table("no rows to emit".into()));
        }
        let rows: Vec<Value> = self.rows.iter().map(|r| Value::Object(self.row_object(r))).collect();
        let doc = serde_json::json!({ "meta": self.meta, "rows": rows });
        serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out)?;
        Ok(())
    }

    fn row_object(&self, row: &SweepRow) -> Map<String, Value> {
        let mut obj = Map::new();
        for &c in self.columns() {
            let v = match row.cell(c) {
                Cell::Num(Some(x)) if x.is_finite() => Value::from(x),
                Cell::Num(_) => Value::Null,
                Cell::Text(t) => t.map_or(Value::Null, Value::from),
            };
            obj.insert(c.name().into(), v);
            if c == Column::TauBohm {
                obj.insert("tau_bohm_divergent".into(), Value::Bool(row.tau_bohm_divergent()));
            }
        }
        obj
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut config = None;
        let mut version = None;
        let mut tolerances = None;
        let mut body = String::new();
        for line in text.lines() {
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(c) = comment.strip_prefix("config:") {
                    config = Some(parse_config(c.trim())?);
                } else if let Some(v) = comment.strip_prefix("version:") {
                    version = Some(v.trim().to_string());
                } else if let Some(t) = comment.strip_prefix("tolerances:") {
                    tolerances = Some(serde_json::from_str(t.trim()).map_err(|e| Error::Table(e.to_string()))?);
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let missing = |what: &str| Error::Table(format!("missing `# {what}` line"));
        let meta = SweepMeta {
            version: version.ok_or_else(|| missing("version"))?,
            config: config.ok_or_else(|| missing("config"))?,
            tolerances: tolerances.ok_or_else(|| missing("tolerances"))?,
        };
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<Column> = reader
            .headers()?
            .iter()
            .map(|h| Column::from_name(h).ok_or_else(|| Error::Table(format!("unknown column `{h}`"))))
            .collect::<Result<_>>()?;
        if header != meta.config.outputs {
            return Err(Error::Table("header does not match the configured outputs".into()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut row = SweepRow::empty_for_reading();
            for (&c, cell) in header.iter().zip(record.iter()) {
                match c {
                    Column::DeltaOverHj0 => {
                        row.delta_over_hj0 = parse_opt(cell)?.ok_or_else(|| Error::Table("empty delta_over_hJ0".into()))?
                    }
                    Column::Regime => row.regime = parse_regime(cell)?,
                    Column::Error => row.error = (!cell.is_empty()).then(|| cell.to_string()),
                    _ => *row.num_mut(c).expect("numeric column") = parse_opt(cell)?,
                }
            }
            rows.push(row);
        }
        Ok(Self { meta, rows })
    }

    pub fn read_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Table(e.to_string()))?;
        let meta: SweepMeta =
            serde_json::from_value(doc.get("meta").cloned().unwrap_or(Value::Null)).map_err(|e| Error::Table(e.to_string()))?;
        validate(&meta.config)?;
        let items = doc.get("rows").and_then(Value::as_array).ok_or_else(|| Error::Table("missing rows".into()))?;
        let mut rows = Vec::new();
        for item in items {
            let obj = item.as_object().ok_or_else(|| Error::Table("row is not an object".into()))?;
            let mut row = SweepRow::empty_for_reading();
            for &c in &meta.config.outputs {
                let v = obj.get(c.name()).ok_or_else(|| Error::Table(format!("row lacks `{}`", c.name())))?;
                let num = || -> Result<Option<f64>> {
                    match v {
                        Value::Null => Ok(None),
                        other => other.as_f64().map(Some).ok_or_else(|| Error::Table(format!("`{}` is not a number", c.name()))),
                    }
                };
                match c {
                    Column::DeltaOverHj0 => row.delta_over_hj0 = num()?.ok_or_else(|| Error::Table("null delta_over_hJ0".into()))?,
                    Column::Regime => row.regime = parse_regime(v.as_str().unwrap_or_default())?,
                    Column::Error => row.error = v.as_str().map(str::to_string),
                    Column::TauBohm => {
                        let divergent = obj.get("tau_bohm_divergent").and_then(Value::as_bool).unwrap_or(false);
                        row.tau_bohm = if divergent { Some(f64::INFINITY) } else { num()? };
                    }
                    _ => *row.num_mut(c).expect("numeric column") = num()?,
                }
            }
            rows.push(row);
        }
        Ok(Self { meta, rows })
    }
}
