//! Thermal Casimir force toolkit.
//!
//! Lifshitz-theory forces between gold plates under Drude and plasma
//! permittivity models, the electrostatic patch background, separation
//! fluctuation corrections, a synthetic torsion-pendulum measurement campaign
//! and the two-parameter χ² fit that discriminates between theory curves.

pub mod analysis;
pub mod campaign;
pub mod constants;
pub mod corrections;
pub mod dielectric;
pub mod electrostatics;
pub mod error;
pub mod lifshitz;
pub mod linfit;
pub mod quadrature;

pub use error::{Error, Result};
