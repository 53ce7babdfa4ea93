//! Simulation and analysis toolkit for itinerant microwave-photon state
//! transfer between superconducting nodes.
//!
//! The library covers the full stack needed to model a two-node photon link:
//! shaped release and capture of wavepackets through tunable couplers
//! ([`pulses`], [`cascade`]), master-equation dynamics with time-dependent
//! controls ([`lindblad`]), qubit-resonator state preparation ([`jc`]),
//! Wigner tomography and density-matrix reconstruction ([`tomography`]),
//! classical circuit design calculators ([`circuit`]), and derivative-free
//! pulse optimization ([`optimize`]).
//!
//! Physical units are SI throughout: seconds, hertz where a quantity is
//! named `*_hz`, and angular rates (rad/s) for all couplings and detunings
//! unless a name says otherwise.

// Validation guards are written `!(x > 0.0)` on purpose: NaN fails the
// inner comparison and is rejected, where the suggested `x <= 0.0` would
// silently accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod circuit;
pub mod error;
pub mod hilbert;
pub mod jc;
pub mod linalg;
pub mod lindblad;
pub mod optimize;
pub mod pulses;
pub mod tomography;

pub use error::{Error, Result};

/// Shorthand for the complex scalar used across the crate.
pub type C64 = num_complex::Complex64;
