//! Desk-scale simulation of a frustrated triangular-lattice Ising magnet on a
//! Rydberg atom array.
//!
//! The crate covers the whole chain: lattice geometry ([`lattice`]), the
//! material and device Hamiltonians and the map between them ([`model`]),
//! control waveforms ([`protocol`]), an exact state-vector engine ([`sv`]), a
//! stochastic series expansion engine ([`qmc`]), simulated readout and its
//! correction ([`readout`]), estimators ([`observables`]) and the analysis
//! procedures built on them ([`analysis`]).

pub mod analysis;
pub mod error;
pub mod lattice;
pub mod model;
pub mod observables;
pub mod protocol;
pub mod qmc;
pub mod readout;
pub mod stats;
pub mod sv;

pub use error::{Error, Result};
