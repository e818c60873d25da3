//! Bohmian dwell time, the incoming-component dwell time `m / (hbar k kappa)`
//! and the geometric time `tau_lambda = m / (hbar kappa^2)`.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::geometry_report;
use crate::params::{Regime, UnitSystem};
use crate::stationary::TwoComponentField;
use crate::table::{fmt_f64, parse_f64};

/// Currents at or below this multiple of `hbar k_in / m` count as zero.
pub const ZERO_CURRENT_TOLERANCE: f64 = 1e-10;
/// Allowed share of the barrier probability in the last tenth of the domain.
pub const TAIL_SHARE_LIMIT: f64 = 1e-6;

/// Probability in `x >= 0`, per unit incident density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierProbability {
    /// Both channels.
    pub total: f64,
    /// Main channel only.
    pub m: f64,
}

fn trapezoid(h: f64, f: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = f.len();
    let mut acc = 0.0;
    for (i, v) in f.enumerate() {
        acc += if i == 0 || i == n - 1 { 0.5 * v } else { v };
    }
    acc * h
}

/// Trapezoidal `int_0^{x_max} |psi|^2 dx`, no convergence check.
pub fn barrier_probability(field: &TwoComponentField) -> BarrierProbability {
    let o = field.grid.origin();
    let h = field.grid.spacing();
    let m = trapezoid(h, field.psi_m[o..].iter().map(|z| z.norm_sqr()));
    let a = trapezoid(h, field.psi_a[o..].iter().map(|z| z.norm_sqr()));
    BarrierProbability { total: m + a, m }
}

/// Barrier probability `N` of an evanescent field. Fails when the last
/// tenth of the domain carries more than `TAIL_SHARE_LIMIT` of the total.
pub fn integrated_density(field: &TwoComponentField) -> Result<BarrierProbability> {
    let n = barrier_probability(field);
    let o = field.grid.origin();
    let right = field.grid.len() - o;
    let start = o + right - (right / 10).max(2);
    let h = field.grid.spacing();
    let tail = trapezoid(h, (start..field.grid.len()).map(|i| field.psi_m[i].norm_sqr() + field.psi_a[i].norm_sqr()));
    let share = tail / n.total;
    if !(share <= TAIL_SHARE_LIMIT) {
        return Err(Error::TailNotConverged { share });
    }
    Ok(n)
}

/// Net current just left of the step, from central differences of `psi_m`.
pub fn current_at_step(field: &TwoComponentField) -> f64 {
    let o = field.grid.origin();
    assert!(o >= 2, "need two nodes left of the step");
    let h = field.grid.spacing();
    let d = (field.psi_m[o] - field.psi_m[o - 2]) / (2.0 * h);
    field.params.hbar() / field.params.mass() * (field.psi_m[o - 1].conj() * d).im
}

/// `N / j` at `x = 0^-`, or `+inf` when the current is zero to tolerance.
pub fn dwell_bohmian(field: &TwoComponentField) -> f64 {
    let j = current_at_step(field);
    let p = &field.params;
    if j.abs() <= ZERO_CURRENT_TOLERANCE * p.hbar() * p.k_in() / p.mass() {
        return f64::INFINITY;
    }
    barrier_probability(field).total / j
}

/// `m / (hbar k kappa)`.
pub fn dwell_qm(k_in: f64, kappa: f64, units: UnitSystem) -> f64 {
    units.mass / (units.hbar * k_in * kappa)
}

/// `m / (hbar kappa^2)`, the decay length over the geometric speed.
pub fn tau_lambda(kappa: f64, units: UnitSystem) -> f64 {
    units.mass / (units.hbar * kappa * kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellReport {
    pub n_total: f64,
    pub n_m: f64,
    pub j_in_bohm: f64,
    pub tau_bohm: f64,
    pub tau_qm: f64,
    pub tau_lambda: f64,
    pub ratio: f64,
    pub k_in: f64,
    pub kappa: f64,
}

impl DwellReport {
    pub const COLUMNS: [&'static str; 9] =
        ["n_total", "n_m", "j_in_bohm", "tau_bohm", "tau_qm", "tau_lambda", "ratio", "k_in", "kappa"];

    pub fn tau_bohm_divergent(&self) -> bool {
        self.tau_bohm == f64::INFINITY
    }

    fn values(&self) -> [f64; 9] {
        [
            self.n_total,
            self.n_m,
            self.j_in_bohm,
            self.tau_bohm,
            self.tau_qm,
            self.tau_lambda,
            self.ratio,
            self.k_in,
            self.kappa,
        ]
    }

    /// Header plus one data row; a divergent `tau_bohm` is written as `inf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::COLUMNS)?;
        w.write_record(self.values().map(fmt_f64))?;
        w.flush()?;
        Ok(())
    }

    pub fn from_csv_record(record: &csv::StringRecord) -> Result<Self> {
        if record.len() != 9 {
            return Err(Error::Table(format!("expected 9 dwell columns, got {}", record.len())));
        }
        let v: Vec<f64> = record.iter().map(parse_f64).collect::<Result<_>>()?;
        Ok(Self {
            n_total: v[0],
            n_m: v[1],
            j_in_bohm: v[2],
            tau_bohm: v[3],
            tau_qm: v[4],
            tau_lambda: v[5],
            ratio: v[6],
            k_in: v[7],
            kappa: v[8],
        })
    }
}

/// All three times for an evanescent field, with `kappa` from the
/// near-step geometry fit.
pub fn compare_dwell(field: &TwoComponentField) -> Result<DwellReport> {
    let p = &field.params;
    if p.classify() != Regime::Evanescent {
        return Err(Error::WrongRegime { expected: "evanescent", actual: p.classify().to_string() });
    }
    let n = integrated_density(field)?;
    let kappa = geometry_report(field)?.kappa;
    Ok(report_from_parts(field, n, kappa))
}

fn report_from_parts(field: &TwoComponentField, n: BarrierProbability, kappa: f64) -> DwellReport {
    let p = &field.params;
    let units = p.units();
    let tau_qm = dwell_qm(p.k_in(), kappa, units);
    let tau_l = tau_lambda(kappa, units);
    DwellReport {
        n_total: n.total,
        n_m: n.m,
        j_in_bohm: current_at_step(field),
        tau_bohm: dwell_bohmian(field),
        tau_qm,
        tau_lambda: tau_l,
        ratio: tau_l / tau_qm,
        k_in: p.k_in(),
        kappa,
    }
}
