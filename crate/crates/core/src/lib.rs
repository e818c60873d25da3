//! Step-coupled two-waveguide scattering: stationary solutions, evanescent
//! geometry, Bohmian and weak-value speeds, dwell times and wave-packet
//! propagation.

pub mod bohm;
pub mod cli;
pub mod dwell;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod params;
pub mod scenario;
pub mod stationary;
pub mod sweep;
pub mod table;
pub mod timedep;

pub use error::{Error, Result};
pub use grid::Grid;
pub use params::{Params, Regime, UnitSystem};
pub use stationary::TwoComponentField;
