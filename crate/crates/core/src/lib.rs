//! Krotov optimal control of single-pulse Rydberg multi-qubit gates.
//!
//! Units: time in µs, angular frequencies in rad/µs, distances in µm.

pub mod config;
pub mod control;
pub mod error;
pub mod gates;
pub mod hamiltonian;
pub mod io;
pub mod krotov;
pub mod linalg;
pub mod noise;
pub mod propagator;
pub mod register;

pub use error::{Error, Result};
