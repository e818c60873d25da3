//! Wave-geometric quantities of the evanescent field: the decay constant
//! `kappa`, the speed `v` fitted from the initial growth of the population
//! in waveguide `a`, and the closed-form curves they are compared with.
//!
//! The fitted speed follows the population-transfer protocol: near the step
//! `rho_a / rho_m ≈ (J0 x / v)^2`, so `v = J0 / slope` where `slope` is the
//! least-squares slope of `sqrt(rho_a / rho_m)` against `x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::params::{Params, Regime, UnitSystem};
use crate::stationary::{mode_wavevectors, ORACLE_MAX_KH, ORACLE_TAIL_LIMIT};
use crate::stationary::TwoComponentField;

/// Tail window for `kappa`: `|psi_m|` between these fractions of `|psi_m(0)|`.
pub const TAIL_UPPER: f64 = 1e-1;
pub const TAIL_LOWER: f64 = 1e-6;
/// Minimum number of tail samples.
pub const TAIL_MIN_SAMPLES: usize = 10;
/// Speed-fit window as a fraction of the shorter of beat and decay lengths.
pub const WINDOW_FRACTION: f64 = 0.1;
/// Minimum number of samples inside the near-step window.
pub const NEAR_STEP_MIN_SAMPLES: usize = 3;
/// Smallest `|psi_m(0)|` that still allows normalization.
pub const MIN_STEP_AMPLITUDE: f64 = 1e-12;

/// Which root of the coupled dispersion is used for the theory speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `m v^2 = |delta| + sqrt(delta^2 - (hbar J0)^2)`, continuous with the
    /// weak-coupling law.
    #[default]
    Plus,
    /// `m v^2 = |delta| - sqrt(delta^2 - (hbar J0)^2)`.
    Minus,
}

/// Theory speed from the coupled dispersion. Undefined in the gap.
pub fn v_theory(params: &Params, branch: Branch) -> Result<f64> {
    let d = params.delta();
    let hj = params.coupling_energy();
    let disc = d * d - hj * hj;
    if disc < 0.0 {
        return Err(Error::WrongRegime { expected: "non-gap", actual: params.classify().to_string() });
    }
    let root = disc.sqrt();
    let e = match branch {
        Branch::Plus => d.abs() + root,
        Branch::Minus => d.abs() - root,
    };
    Ok((e.abs() / params.mass()).sqrt())
}

/// Weak-coupling speed `sqrt(2 |delta| / m)`.
pub fn v_weak_coupling(params: &Params) -> f64 {
    (2.0 * params.delta().abs() / params.mass()).sqrt()
}

/// Upper edge of the speed-fit window,
/// `0.1 * min(1/|q_s - q_a|, 1/max|q|)`.
pub fn speed_window(params: &Params) -> f64 {
    let modes = mode_wavevectors(params);
    let beat = 1.0 / modes.separation();
    let decay = 1.0 / modes.max_magnitude();
    WINDOW_FRACTION * beat.min(decay)
}

/// Grid that satisfies the oracle preconditions and puts at least twenty
/// nodes inside the speed-fit window.
pub fn resolved_grid(params: &Params) -> Result<Grid> {
    let modes = mode_wavevectors(params);
    let qmax = modes.max_magnitude().max(params.k_in());
    let spacing = (ORACLE_MAX_KH / qmax).min(speed_window(params) / 20.0);
    let x_min = -(4.0 * std::f64::consts::PI / params.k_in()).max(2.0);
    let x_max = match modes.slowest_decay() {
        Some(kappa) => 1.25 * (-ORACLE_TAIL_LIMIT.ln()) / kappa,
        None => {
            let qmin = [modes.q_s.norm(), modes.q_a.norm()]
                .into_iter()
                .filter(|q| *q > 0.0)
                .fold(f64::INFINITY, f64::min);
            20.0 / qmin
        }
    };
    Grid::covering(x_min, x_max, spacing)
}

/// Least-squares line `y = a + b x`; returns `(a, b, rms)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum::<f64>() / n).sqrt();
    (a, b, rms)
}

/// Least-squares line through the origin `y = b x`; returns `(b, rms)`.
fn origin_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let b = sxy / sxx;
    let n = x.len() as f64;
    let rms = (x.iter().zip(y).map(|(u, v)| (v - b * u).powi(2)).sum::<f64>() / n).sqrt();
    (b, rms)
}

/// Result of a decay-constant fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaFit {
    pub kappa: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub rms: f64,
}

/// Decay constant from the far tail: slope of `ln|psi_m|` where `|psi_m|`
/// has fallen to between `1e-6` and `1e-1` of its value at the step.
pub fn extract_kappa(field: &TwoComponentField) -> Result<KappaFit> {
    let g = &field.grid;
    let a0 = field.psi_m_at_step().norm();
    if a0 < MIN_STEP_AMPLITUDE {
        return Err(Error::Normalization(a0));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in g.origin() + 1..g.len() {
        let ratio = field.psi_m[i].norm() / a0;
        if (TAIL_LOWER..=TAIL_UPPER).contains(&ratio) {
            xs.push(g.x(i));
            ys.push(field.psi_m[i].norm().ln());
        }
    }
    if xs.len() < TAIL_MIN_SAMPLES {
        return Err(Error::KappaExtraction(format!(
            "tail window holds {} samples (< {TAIL_MIN_SAMPLES})",
            xs.len()
        )));
    }
    let contiguous = xs.windows(2).all(|w| (w[1] - w[0] - g.spacing()).abs() < 1e-6 * g.spacing());
    let decreasing = ys.windows(2).all(|w| w[1] < w[0]);
    if !contiguous || !decreasing {
        return Err(Error::KappaExtraction("tail is not monotonic (oscillatory contamination)".into()));
    }
    let (_, slope, rms) = line_fit(&xs, &ys);
    Ok(KappaFit { kappa: -slope, window: (xs[0], *xs.last().unwrap()), samples: xs.len(), rms })
}

/// Decay constant at the step: slope of `ln|psi_m|` over `[0, x_hi]`.
pub fn extract_kappa_near_step(field: &TwoComponentField, x_hi: f64) -> Result<KappaFit> {
    let g = &field.grid;
    let a0 = field.psi_m_at_step().norm();
    if a0 < MIN_STEP_AMPLITUDE {
        return Err(Error::Normalization(a0));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in g.origin()..g.len() {
        let x = g.x(i);
        if x > x_hi * (1.0 + 1e-12) {
            break;
        }
        xs.push(x);
        ys.push(field.psi_m[i].norm().ln());
    }
    if xs.len() < NEAR_STEP_MIN_SAMPLES {
        return Err(Error::KappaExtraction(format!(
            "near-step window holds {} samples (< {NEAR_STEP_MIN_SAMPLES})",
            xs.len()
        )));
    }
    let (_, slope, rms) = line_fit(&xs, &ys);
    Ok(KappaFit { kappa: -slope, window: (0.0, *xs.last().unwrap()), samples: xs.len(), rms })
}

/// Result of the speed fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedFit {
    pub v: f64,
    /// Slope of `sqrt(rho_a / rho_m)` at the step, `J0 / v`.
    pub slope: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub rms: f64,
}

/// Fits `sqrt(rho_a / rho_m) = (J0 / v) x` on the nodes in `(0, x_hi]`.
///
/// Works on any pair of density profiles sampled on `grid`, including
/// time-averaged ones.
pub fn fit_speed_profile(grid: &Grid, rho_m: &[f64], rho_a: &[f64], j0: f64, x_hi: f64) -> Result<SpeedFit> {
    let i0 = grid.origin();
    let step = rho_m[i0].sqrt();
    if step < MIN_STEP_AMPLITUDE {
        return Err(Error::Normalization(step));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in i0 + 1..grid.len() {
        let x = grid.x(i);
        if x > x_hi * (1.0 + 1e-12) {
            break;
        }
        if rho_m[i] <= 0.0 {
            return Err(Error::Normalization(0.0));
        }
        xs.push(x);
        ys.push((rho_a[i] / rho_m[i]).sqrt());
    }
    if xs.is_empty() || ys.iter().all(|y| *y == 0.0) {
        return Err(Error::EmptyWindow);
    }
    let (slope, rms) = origin_fit(&xs, &ys);
    if !(slope > 0.0) || j0 <= 0.0 {
        return Err(Error::EmptyWindow);
    }
    Ok(SpeedFit { v: j0 / slope, slope, window: (0.0, *xs.last().unwrap()), samples: xs.len(), rms })
}

/// Speed fit on a stationary field, window from its parameters.
pub fn fit_speed_v(field: &TwoComponentField) -> Result<SpeedFit> {
    let regime = field.params.classify();
    if regime == Regime::Gap {
        return Err(Error::WrongRegime { expected: "evanescent or propagating", actual: regime.to_string() });
    }
    let rho_m: Vec<f64> = field.psi_m.iter().map(|z| z.norm_sqr()).collect();
    let rho_a: Vec<f64> = field.psi_a.iter().map(|z| z.norm_sqr()).collect();
    fit_speed_profile(&field.grid, &rho_m, &rho_a, field.params.j0(), speed_window(&field.params))
}

/// Everything the population-transfer protocol extracts from one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// Decay constant at the step (same window as the speed fit).
    pub kappa: f64,
    /// Asymptotic decay constant from the far tail.
    pub kappa_tail: f64,
    pub v_fit: f64,
    pub v_theory: f64,
    pub v_weak: f64,
    /// Decay length `1 / kappa`.
    pub lambda: f64,
    pub fit_window: (f64, f64),
    pub tail_window: (f64, f64),
    pub fit_rms: f64,
}

/// Runs both decay fits and the speed fit on an evanescent field.
pub fn geometry_report(field: &TwoComponentField) -> Result<GeometryReport> {
    let p = &field.params;
    if p.classify() != Regime::Evanescent {
        return Err(Error::WrongRegime { expected: "evanescent", actual: p.classify().to_string() });
    }
    let speed = fit_speed_v(field)?;
    let near = extract_kappa_near_step(field, speed_window(p))?;
    let tail = extract_kappa(field)?;
    Ok(GeometryReport {
        kappa: near.kappa,
        kappa_tail: tail.kappa,
        v_fit: speed.v,
        v_theory: v_theory(p, Branch::Plus)?,
        v_weak: v_weak_coupling(p),
        lambda: 1.0 / near.kappa,
        fit_window: speed.window,
        tail_window: tail.window,
        fit_rms: speed.rms,
    })
}

/// Relative discrepancy `|v_fit - hbar kappa / m| / v_fit`.
pub fn identity_v_kappa(report: &GeometryReport, units: UnitSystem) -> f64 {
    (report.v_fit - units.hbar * report.kappa / units.mass).abs() / report.v_fit
}
