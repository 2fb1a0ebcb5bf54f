//! Simulation and verification suite for the KCBS contextuality experiment
//! performed with a single photon spread over three optical modes.
//!
//! The crate is organised bottom-up:
//!
//! * [`qutrit`] : states, measurement directions and the spin-1 click rule.
//! * [`pentagram`] : the five-direction measurement geometry, the optimal
//!   state and the quantum value of the five-term sum.
//! * [`optics`] : the three-mode wave-plate circuit that realises each
//!   measurement stage, including the blocking stages.
//! * [`montecarlo`] : heralded photon counting with losses, efficiency
//!   correction and the statistical estimators.
//! * [`oracle`] : exhaustive classical bounds and joint-distribution
//!   feasibility by linear programming.
//! * [`cli`] : the `kcbs` command line front end.

pub mod cli;
pub mod eigen;
mod error;
pub mod montecarlo;
pub mod optics;
pub mod oracle;
pub mod pentagram;
pub mod qutrit;

pub use error::{Error, Result};

/// Tolerance used when validating constructed values (norms, unitarity).
pub const CONSTRUCTION_TOL: f64 = 1e-12;

/// Tolerance of the compatibility gate for co-measured directions.
pub const COMPATIBILITY_TOL: f64 = 1e-9;
