//! Polar decomposition, weak momentum, probability current and Bohmian
//! trajectories.
//!
//! Two independent routes to the particle velocity live here: the phase
//! gradient of the unwrapped polar form (`grad S / m`) and the current
//! ratio `j / rho` built from central differences of the complex samples.
//! They agree to `O(h^2)` wherever the density is resolvable.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::params::UnitSystem;
use crate::stationary::TwoComponentField;
use crate::table::fmt_f64;

/// Nodes with `R <= AMPLITUDE_MASK * max R` are masked.
pub const AMPLITUDE_MASK: f64 = 1e-12;
/// Relative slack on the `< pi` phase-step guard.
const UNWRAP_SLACK: f64 = 1e-6;

/// Uniformly spaced sample positions `start + i * spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub spacing: f64,
    pub len: usize,
}

impl Axis {
    pub fn new(start: f64, spacing: f64, len: usize) -> Self {
        Self { start, spacing, len }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.start + i as f64 * self.spacing
    }

    /// Nodes of `grid` with `x >= 0`.
    pub fn right_of_step(grid: &Grid) -> Self {
        Self { start: 0.0, spacing: grid.spacing(), len: grid.len() - grid.origin() }
    }

    pub fn end(&self) -> f64 {
        self.x(self.len - 1)
    }
}

impl From<&Grid> for Axis {
    fn from(g: &Grid) -> Self {
        Self { start: g.x_min(), spacing: g.spacing(), len: g.len() }
    }
}

/// Boundary treatment for derivatives and normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// One-sided stencils at the ends; the field must decay there.
    Open,
    /// Samples cover exactly one period (`len * spacing`), no duplicate node.
    Periodic,
}

/// Central-difference derivative with second-order one-sided ends
/// (or wrap-around for periodic data).
fn derivative<T>(f: &[T], h: f64, boundary: Boundary) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = f.len();
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let v = match boundary {
            Boundary::Periodic => (f[(i + 1) % n] - f[(i + n - 1) % n]) * (0.5 / h),
            Boundary::Open if i == 0 => (f[1] * 4.0 - f[0] * 3.0 - f[2]) * (0.5 / h),
            Boundary::Open if i == n - 1 => (f[n - 1] * 3.0 - f[n - 2] * 4.0 + f[n - 3]) * (0.5 / h),
            Boundary::Open => (f[i + 1] - f[i - 1]) * (0.5 / h),
        };
        d.push(v);
    }
    d
}

/// Amplitude and unwrapped phase of one complex component,
/// `psi = R exp(i S / hbar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarField {
    pub axis: Axis,
    pub hbar: f64,
    pub r: Vec<f64>,
    /// Phase in action units, continuous across valid nodes.
    pub s: Vec<f64>,
    /// `grad R / R`, from central differences of `ln R`.
    pub grad_log_r: Vec<f64>,
    pub grad_s: Vec<f64>,
    /// Node amplitude above the mask threshold.
    pub valid: Vec<bool>,
    /// Derivatives available (all stencil nodes valid).
    pub grad_valid: Vec<bool>,
}

/// Polar form of `samples`. Fails if the phase jumps by `pi` or more
/// between neighbouring valid nodes.
pub fn polar_decompose(axis: Axis, samples: &[Complex64], hbar: f64) -> Result<PolarField> {
    assert_eq!(samples.len(), axis.len);
    assert!(axis.len >= 3, "polar decomposition needs three samples");
    let r: Vec<f64> = samples.iter().map(|z| z.norm()).collect();
    let r_max = r.iter().copied().fold(0.0, f64::max);
    let valid: Vec<bool> = r.iter().map(|v| *v > AMPLITUDE_MASK * r_max).collect();

    let mut phase = vec![0.0; axis.len];
    let mut last: Option<usize> = None;
    for i in 0..axis.len {
        if !valid[i] {
            phase[i] = last.map_or(0.0, |j| phase[j]);
            continue;
        }
        phase[i] = match last {
            None => samples[i].arg(),
            Some(j) => {
                let step = (samples[i] * samples[j].conj()).arg();
                if step.abs() >= PI * (1.0 - UNWRAP_SLACK) {
                    return Err(Error::PhaseUnwrap { x_left: axis.x(j), x_right: axis.x(i), step });
                }
                phase[j] + step
            }
        };
        last = Some(i);
    }
    let s: Vec<f64> = phase.iter().map(|p| hbar * p).collect();

    let log_r: Vec<f64> = r.iter().zip(&valid).map(|(v, ok)| if *ok { v.ln() } else { 0.0 }).collect();
    let grad_log_r = derivative(&log_r, axis.spacing, Boundary::Open);
    let grad_s = derivative(&s, axis.spacing, Boundary::Open);
    let n = axis.len;
    let grad_valid: Vec<bool> = (0..n)
        .map(|i| {
            let (lo, hi) = if i == 0 {
                (0, 2)
            } else if i == n - 1 {
                (n - 3, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (lo..=hi).all(|k| valid[k])
        })
        .collect();
    Ok(PolarField { axis, hbar, r, s, grad_log_r, grad_s, valid, grad_valid })
}

/// Weak value of momentum `grad S - i hbar grad R / R` at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakMomentumField {
    pub axis: Axis,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub valid: Vec<bool>,
}

pub fn weak_momentum(polar: &PolarField) -> WeakMomentumField {
    WeakMomentumField {
        axis: polar.axis,
        re: polar.grad_s.clone(),
        im: polar.grad_log_r.iter().map(|g| -polar.hbar * g).collect(),
        valid: polar.grad_valid.clone(),
    }
}

impl WeakMomentumField {
    /// CSV columns `x, re_pw, im_pw, valid`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "re_pw", "im_pw", "valid"])?;
        for i in 0..self.axis.len {
            w.write_record([
                fmt_f64(self.axis.x(i)),
                fmt_f64(self.re[i]),
                fmt_f64(self.im[i]),
                (self.valid[i] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The two operational speeds: phase-gradient `v_S = Re p_w / m` and the
/// decay speed `|Im p_w| / m = hbar |grad R / R| / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalSpeeds {
    pub v_s: Vec<f64>,
    pub decay_speed: Vec<f64>,
    pub valid: Vec<bool>,
}

pub fn operational_speeds(weak: &WeakMomentumField, units: UnitSystem) -> OperationalSpeeds {
    OperationalSpeeds {
        v_s: weak.re.iter().map(|p| p / units.mass).collect(),
        decay_speed: weak.im.iter().map(|p| p.abs() / units.mass).collect(),
        valid: weak.valid.clone(),
    }
}

impl OperationalSpeeds {
    pub fn max_abs_v_s(&self) -> f64 {
        self.v_s.iter().zip(&self.valid).filter(|(_, ok)| **ok).map(|(v, _)| v.abs()).fold(0.0, f64::max)
    }
}

/// `j = (hbar / m) Im(conj(psi) grad psi)` with central differences.
pub fn probability_current(axis: Axis, samples: &[Complex64], units: UnitSystem) -> Vec<f64> {
    let d = derivative(samples, axis.spacing, Boundary::Open);
    samples.iter().zip(&d).map(|(p, dp)| units.hbar / units.mass * (p.conj() * dp).im).collect()
}

/// Velocity samples with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSamples {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Guiding velocity `v_B = j / |psi|^2`; nodes at negligible density masked.
pub fn bohm_velocity(axis: Axis, samples: &[Complex64], units: UnitSystem) -> MaskedSamples {
    let j = probability_current(axis, samples, units);
    let rho: Vec<f64> = samples.iter().map(|z| z.norm_sqr()).collect();
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    let floor = AMPLITUDE_MASK * AMPLITUDE_MASK * rho_max;
    let valid: Vec<bool> = rho.iter().map(|r| *r > floor).collect();
    let values = j.iter().zip(&rho).zip(&valid).map(|((j, r), ok)| if *ok { j / r } else { 0.0 }).collect();
    MaskedSamples { values, valid }
}

/// Four-point Lagrange weights for fractional position `t` in `[0, 1)`
/// between nodes 1 and 2 of the stencil `{-1, 0, 1, 2}`.
#[inline]
pub(crate) fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Stencil start and weights for position `x`, or `None` outside the axis.
#[inline]
pub(crate) fn cubic_stencil(axis: &Axis, x: f64) -> Option<(usize, [f64; 4])> {
    let u = (x - axis.start) / axis.spacing;
    if !(u >= 0.0 && u <= (axis.len - 1) as f64) || axis.len < 4 {
        return None;
    }
    let base = (u.floor() as usize).clamp(1, axis.len - 3);
    let t = u - base as f64;
    Some((base - 1, cubic_weights(t)))
}

/// Density and momentum density `sum_c conj(psi_c) grad psi_c` of one or
/// more components: everything the guiding law and weak values need.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidingField {
    pub axis: Axis,
    pub units: UnitSystem,
    pub density: Vec<f64>,
    pub flux: Vec<Complex64>,
    pub boundary: Boundary,
    floor: f64,
}

impl GuidingField {
    pub fn from_components(axis: Axis, components: &[&[Complex64]], units: UnitSystem, boundary: Boundary) -> Self {
        let mut density = vec![0.0; axis.len];
        let mut flux = vec![Complex64::new(0.0, 0.0); axis.len];
        for c in components {
            assert_eq!(c.len(), axis.len);
            let d = derivative(c, axis.spacing, boundary);
            for i in 0..axis.len {
                density[i] += c[i].norm_sqr();
                flux[i] += c[i].conj() * d[i];
            }
        }
        let max = density.iter().copied().fold(0.0, f64::max);
        let floor = AMPLITUDE_MASK * AMPLITUDE_MASK * max;
        Self { axis, units, density, flux, boundary, floor }
    }

    pub fn from_field(field: &TwoComponentField) -> Self {
        Self::from_components(
            Axis::from(&field.grid),
            &[&field.psi_m, &field.psi_a],
            field.params.units(),
            Boundary::Open,
        )
    }

    pub fn current(&self) -> Vec<f64> {
        self.flux.iter().map(|f| self.units.hbar / self.units.mass * f.im).collect()
    }

    /// Densities at or below this value are masked.
    pub fn density_floor(&self) -> f64 {
        self.floor
    }

    /// Interpolated `(rho, flux)` at `x`.
    pub fn sample(&self, x: f64) -> Option<(f64, Complex64)> {
        let (start, w) = cubic_stencil(&self.axis, x)?;
        let mut rho = 0.0;
        let mut flux = Complex64::new(0.0, 0.0);
        for k in 0..4 {
            rho += w[k] * self.density[start + k];
            flux += self.flux[start + k] * w[k];
        }
        Some((rho, flux))
    }

    /// Guiding velocity at `x`, `None` if outside or below the density floor.
    pub fn velocity_at(&self, x: f64) -> Option<f64> {
        let (rho, flux) = self.sample(x)?;
        if rho <= self.density_floor() {
            return None;
        }
        Some(self.units.hbar / self.units.mass * flux.im / rho)
    }

    /// Weak actual value of momentum `-i hbar (sum conj(psi) grad psi) / rho` at `x`.
    pub fn weak_value_at(&self, x: f64) -> Option<Complex64> {
        let (rho, flux) = self.sample(x)?;
        if rho <= self.density_floor() {
            return None;
        }
        Some(Complex64::new(0.0, -self.units.hbar) * flux / rho)
    }
}

/// Why a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    MaskedRegion,
    LeftDomain,
}

/// Time-ordered particle history with the guiding velocity and the weak
/// actual value of momentum at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub weak_values: Vec<Complex64>,
    pub stop: StopReason,
}

impl Trajectory {
    /// CSV columns `t, x, v, re_pw, im_pw`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "v", "re_pw", "im_pw"])?;
        for k in 0..self.times.len() {
            w.write_record([
                fmt_f64(self.times[k]),
                fmt_f64(self.positions[k]),
                fmt_f64(self.velocities[k]),
                fmt_f64(self.weak_values[k].re),
                fmt_f64(self.weak_values[k].im),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates `dx/dt = v_B(x)` in a time-independent guiding field with
/// classical RK4.
pub fn integrate_trajectory_stationary(guide: &GuidingField, x0: f64, duration: f64, dt: f64) -> Result<Trajectory> {
    let v0 = guide.velocity_at(x0).ok_or_else(|| Error::InvalidParameter {
        field: "x0",
        reason: format!("starting point {x0} is outside the grid or at negligible density"),
    })?;
    if !(dt > 0.0 && duration >= 0.0) {
        return Err(Error::InvalidParameter { field: "dt", reason: "time step must be positive".into() });
    }
    let steps = (duration / dt).round() as usize;
    let mut traj = Trajectory {
        times: vec![0.0],
        positions: vec![x0],
        velocities: vec![v0],
        weak_values: vec![guide.weak_value_at(x0).expect("checked above")],
        stop: StopReason::Completed,
    };
    let mut x = x0;
    for k in 0..steps {
        let stage = |x: f64| guide.velocity_at(x);
        let next = (|| {
            let k1 = stage(x)?;
            let k2 = stage(x + 0.5 * dt * k1)?;
            let k3 = stage(x + 0.5 * dt * k2)?;
            let k4 = stage(x + dt * k3)?;
            Some(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        })();
        let Some(xn) = next else {
            traj.stop = stop_reason(guide, x, dt);
            break;
        };
        let (Some(v), Some(pw)) = (guide.velocity_at(xn), guide.weak_value_at(xn)) else {
            traj.stop = stop_reason(guide, xn, dt);
            break;
        };
        x = xn;
        traj.times.push((k + 1) as f64 * dt);
        traj.positions.push(x);
        traj.velocities.push(v);
        traj.weak_values.push(pw);
    }
    Ok(traj)
}

fn stop_reason(guide: &GuidingField, x: f64, _dt: f64) -> StopReason {
    let margin = guide.axis.spacing;
    if x <= guide.axis.start + margin || x >= guide.axis.end() - margin {
        StopReason::LeftDomain
    } else {
        StopReason::MaskedRegion
    }
}

/// Monte Carlo average of the weak actual value of momentum over positions
/// drawn from `|psi|^2`, next to the quadrature expectation `<p>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakAverage {
    pub mean: Complex64,
    /// Standard errors of the real and imaginary parts.
    pub std_error: (f64, f64),
    pub quadrature: Complex64,
    pub n_samples: usize,
}

impl WeakAverage {
    /// Combined complex standard error.
    pub fn combined_std_error(&self) -> f64 {
        self.std_error.0.hypot(self.std_error.1)
    }

    /// `|mean - quadrature|` in units of the combined standard error.
    pub fn deviation_in_std_errors(&self) -> f64 {
        (self.mean - self.quadrature).norm() / self.combined_std_error()
    }
}

/// Observable whose weak actual value is averaged. Only momentum is
/// implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    Momentum,
}

/// RNG for sample `index` of a run seeded with `seed`. Streams are
/// independent and do not depend on thread scheduling.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Inverse-CDF sampler over nodal cells `[x_i - h/2, x_i + h/2]` weighted
/// by the nodal density.
#[derive(Debug, Clone)]
pub struct DensitySampler {
    axis: Axis,
    cumulative: Vec<f64>,
}

impl DensitySampler {
    pub fn new(axis: Axis, density: &[f64]) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(density.len());
        let mut acc = 0.0;
        for d in density {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(Error::NotNormalizable("density has invalid samples".into()));
            }
            acc += d;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::NotNormalizable("density integrates to zero".into()));
        }
        for c in cumulative.iter_mut() {
            *c /= acc;
        }
        Ok(Self { axis, cumulative })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|c| *c < u).min(self.cumulative.len() - 1);
        let below = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        let width = self.cumulative[i] - below;
        let frac = if width > 0.0 { (u - below) / width } else { 0.5 };
        let x = self.axis.x(i) + (frac - 0.5) * self.axis.spacing;
        x.clamp(self.axis.start, self.axis.end())
    }
}

/// Relative density at the domain edges above which an open-boundary field
/// is considered non-normalizable.
pub const EDGE_DENSITY_LIMIT: f64 = 1e-6;

pub fn ensemble_weak_average(
    guide: &GuidingField,
    observable: Observable,
    n_samples: usize,
    seed: u64,
) -> Result<WeakAverage> {
    let Observable::Momentum = observable;
    if n_samples < 2 {
        return Err(Error::InvalidParameter { field: "n_samples", reason: "need at least two samples".into() });
    }
    let rho = &guide.density;
    let total: f64 = rho.iter().sum::<f64>() * guide.axis.spacing;
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NotNormalizable("zero or non-finite norm".into()));
    }
    if guide.boundary == Boundary::Open {
        let edge = rho[0].max(rho[rho.len() - 1]) / rho_max;
        if edge > EDGE_DENSITY_LIMIT {
            return Err(Error::NotNormalizable(format!("edge density ratio {edge:.3e}")));
        }
    }
    let flux_sum: Complex64 = guide.flux.iter().sum::<Complex64>() * guide.axis.spacing;
    let quadrature = Complex64::new(0.0, -guide.units.hbar) * flux_sum / total;

    let sampler = DensitySampler::new(guide.axis, rho)?;
    let values: Vec<Complex64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(seed, k);
            loop {
                let x = sampler.draw(&mut rng);
                let wrapped = match guide.boundary {
                    Boundary::Periodic => periodic_value(guide, x),
                    Boundary::Open => guide.weak_value_at(x),
                };
                if let Some(v) = wrapped {
                    return v;
                }
            }
        })
        .collect();
    let n = n_samples as f64;
    let mean: Complex64 = values.iter().sum::<Complex64>() / n;
    let var_re = values.iter().map(|v| (v.re - mean.re).powi(2)).sum::<f64>() / (n - 1.0);
    let var_im = values.iter().map(|v| (v.im - mean.im).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(WeakAverage { mean, std_error: ((var_re / n).sqrt(), (var_im / n).sqrt()), quadrature, n_samples })
}

/// Weak value on periodic data: interpolates with wrapped stencil indices.
fn periodic_value(guide: &GuidingField, x: f64) -> Option<Complex64> {
    let n = guide.axis.len;
    let u = (x - guide.axis.start) / guide.axis.spacing;
    let base = u.floor();
    let t = u - base;
    let w = cubic_weights(t);
    let mut rho = 0.0;
    let mut flux = Complex64::new(0.0, 0.0);
    for (k, wk) in w.iter().enumerate() {
        let idx = (base as i64 - 1 + k as i64).rem_euclid(n as i64) as usize;
        rho += wk * guide.density[idx];
        flux += guide.flux[idx] * *wk;
    }
    if rho <= guide.density_floor() {
        return None;
    }
    Some(Complex64::new(0.0, -guide.units.hbar) * flux / rho)
}
