//! Physical configuration of the step-coupled two-waveguide system.
//!
//! Waveguide `m` runs over the whole line; waveguide `a` starts at `x = 0`.
//! For `x >= 0` both guides sit at potential `V0` and exchange amplitude at
//! rate `J0`. The detuning `delta = E - V0 + hbar*J0` decides whether the
//! coupled region is evanescent, gapped or propagating.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Action and mass scales. Natural units (`hbar = mass = 1`) by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::NATURAL
    }
}

impl UnitSystem {
    pub const NATURAL: UnitSystem = UnitSystem { hbar: 1.0, mass: 1.0 };

    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "hbar",
                reason: format!("must be positive and finite, got {hbar}"),
            });
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "mass",
                reason: format!("must be positive and finite, got {mass}"),
            });
        }
        Ok(Self { hbar, mass })
    }

    /// `hbar^2 / (2 m)`, the kinetic prefactor.
    pub fn kinetic_scale(&self) -> f64 {
        self.hbar * self.hbar / (2.0 * self.mass)
    }

    /// Wavevector magnitude for kinetic energy `energy` (sign ignored).
    pub fn wavevector(&self, energy: f64) -> f64 {
        (2.0 * self.mass * energy.abs()).sqrt() / self.hbar
    }
}

/// Validated configuration. Derived quantities are computed on construction
/// and the fields are private so they cannot drift out of sync.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    units: UnitSystem,
    j0: f64,
    v0: f64,
    energy: f64,
    delta: f64,
    k_in: f64,
}

/// Regime of the coupled region, a pure function of `delta / (hbar J0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `delta < -hbar J0`: both normal modes decay.
    Evanescent,
    /// `|delta| <= hbar J0`: one mode decays, one propagates.
    Gap,
    /// `delta > hbar J0`: both normal modes propagate.
    Propagating,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Evanescent => "evanescent",
            Regime::Gap => "gap",
            Regime::Propagating => "propagating",
        }
    }

    pub fn from_ratio(delta_over_hj0: f64) -> Regime {
        if delta_over_hj0 < -1.0 {
            Regime::Evanescent
        } else if delta_over_hj0 > 1.0 {
            Regime::Propagating
        } else {
            Regime::Gap
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Params {
    /// Builds a configuration, rejecting `J0 <= 0` and `E <= 0`.
    pub fn new(units: UnitSystem, j0: f64, v0: f64, energy: f64) -> Result<Self> {
        let units = UnitSystem::new(units.hbar, units.mass)?;
        if !(j0 > 0.0 && j0.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "J0",
                reason: format!("coupling rate must be positive, got {j0}"),
            });
        }
        Self::build(units, j0, v0, energy)
    }

    /// Same as [`Params::new`] but with the coupling switched off. Used for
    /// decoupled control runs; the coupled-mode solver rejects it.
    pub fn uncoupled(units: UnitSystem, v0: f64, energy: f64) -> Result<Self> {
        let units = UnitSystem::new(units.hbar, units.mass)?;
        Self::build(units, 0.0, v0, energy)
    }

    fn build(units: UnitSystem, j0: f64, v0: f64, energy: f64) -> Result<Self> {
        if !v0.is_finite() {
            return Err(Error::InvalidParameter {
                field: "V0",
                reason: format!("must be finite, got {v0}"),
            });
        }
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "E",
                reason: format!("incident energy must be positive, got {energy}"),
            });
        }
        let delta = energy - v0 + units.hbar * j0;
        let k_in = units.wavevector(energy);
        Ok(Self { units, j0, v0, energy, delta, k_in })
    }

    /// Chooses `V0` so that the detuning equals `delta` at energy `energy`.
    pub fn with_detuning(units: UnitSystem, j0: f64, delta: f64, energy: f64) -> Result<Self> {
        let v0 = energy + units.hbar * j0 - delta;
        Self::new(units, j0, v0, energy)
    }

    pub fn units(&self) -> UnitSystem {
        self.units
    }
    pub fn hbar(&self) -> f64 {
        self.units.hbar
    }
    pub fn mass(&self) -> f64 {
        self.units.mass
    }
    pub fn j0(&self) -> f64 {
        self.j0
    }
    pub fn v0(&self) -> f64 {
        self.v0
    }
    pub fn energy(&self) -> f64 {
        self.energy
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn k_in(&self) -> f64 {
        self.k_in
    }

    /// Coupling energy `hbar * J0`.
    pub fn coupling_energy(&self) -> f64 {
        self.units.hbar * self.j0
    }

    pub fn delta_over_hj0(&self) -> f64 {
        self.delta / self.coupling_energy()
    }

    pub fn classify(&self) -> Regime {
        let hj = self.coupling_energy();
        if self.delta < -hj {
            Regime::Evanescent
        } else if self.delta > hj {
            Regime::Propagating
        } else {
            Regime::Gap
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatParams {
    hbar: f64,
    mass: f64,
    #[serde(rename = "J0")]
    j0: f64,
    #[serde(rename = "V0")]
    v0: f64,
    #[serde(rename = "E")]
    energy: f64,
}

impl Serialize for Params {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FlatParams {
            hbar: self.units.hbar,
            mass: self.units.mass,
            j0: self.j0,
            v0: self.v0,
            energy: self.energy,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Params {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let flat = FlatParams::deserialize(d)?;
        Params::new(UnitSystem { hbar: flat.hbar, mass: flat.mass }, flat.j0, flat.v0, flat.energy)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const N: UnitSystem = UnitSystem::NATURAL;

    #[test]
    fn detuning_and_wavevector() {
        let p = Params::new(N, 1.0, 4.0, 1.0).unwrap();
        assert_eq!(p.delta(), -2.0);
        assert!((p.k_in() - 2f64.sqrt()).abs() < 1e-15);
        let p = Params::new(N, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.delta(), 1.0);
        assert!((p.k_in() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_fields() {
        match Params::new(N, 1.0, 4.0, -1.0) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "E"),
            other => panic!("unexpected {other:?}"),
        }
        match Params::new(N, 0.0, 4.0, 1.0) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "J0"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(UnitSystem::new(0.0, 1.0).is_err());
    }

    #[test]
    fn regimes() {
        let at = |delta: f64| Params::with_detuning(N, 1.0, delta, 1.0).unwrap().classify();
        assert_eq!(at(-2.0), Regime::Evanescent);
        assert_eq!(at(2.0), Regime::Propagating);
        assert_eq!(at(-0.5), Regime::Gap);
        assert_eq!(at(-1.0), Regime::Gap);
        assert_eq!(at(1.0), Regime::Gap);
    }

    #[test]
    fn json_is_flat() {
        let p = Params::new(N, 1.0, 4.0, 1.0).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"hbar":1.0,"mass":1.0,"J0":1.0,"V0":4.0,"E":1.0}"#);
        let back: Params = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Params>(r#"{"hbar":1,"mass":1,"J0":1,"V0":4,"E":-1}"#).is_err());
    }

    proptest! {
        #[test]
        fn delta_is_gauge_invariant(e in 0.1f64..10.0, v0 in -5.0f64..5.0, c in 0.0f64..5.0, j in 0.01f64..2.0) {
            let a = Params::new(N, j, v0, e).unwrap();
            let b = Params::new(N, j, v0 + c, e + c).unwrap();
            prop_assert!((a.delta() - b.delta()).abs() < 1e-12);
        }

        #[test]
        fn regime_depends_on_ratio_only(ratio in -5.0f64..5.0, j in 0.01f64..3.0, hbar in 0.5f64..2.0, e in 0.5f64..4.0) {
            prop_assume!((ratio.abs() - 1.0).abs() > 1e-9);
            let units = UnitSystem::new(hbar, 1.0).unwrap();
            let p = Params::with_detuning(units, j, ratio * hbar * j, e).unwrap();
            prop_assert_eq!(p.classify(), Regime::from_ratio(ratio));
        }
    }
}
