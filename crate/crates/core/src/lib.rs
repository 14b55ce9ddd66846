//! Rate-dependent membrane model of cell microinjection.
//!
//! The cell is a thin Mooney-Rivlin membrane under internal pressure, squeezed
//! between a flat plate and a flat-ended needle. For a prescribed contact angle
//! the axisymmetric equilibrium is found by shooting, which yields the injection
//! force, the cell deformation and the tension distribution. The elastic
//! coefficient depends on injection velocity and acceleration, and can be
//! identified back from measured force-deformation data.

pub mod error;
pub mod equilibrium;
pub mod geometry;
pub mod identify;
pub mod integrate;
pub mod material;
pub mod response;
pub mod trace;
pub mod cli;
pub mod config;
pub mod report;

pub use error::{Category, Error, Result};
