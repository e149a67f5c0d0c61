//! H-infinity analysis of discrete-time LTI systems.
//!
//! The squared H-infinity norm (full spectrum or restricted to a frequency
//! band) is computed as the optimal value of a semidefinite program over the
//! time-averaged covariance of the stacked state and input. An optimal
//! covariance is split into rank-one pieces, and the best piece yields a
//! worst-case sinusoidal input together with its frequency.

pub mod band;
pub mod build;
pub mod certificate;
pub mod error;
pub mod herm;
pub mod lti;
pub mod oracle;
pub mod solver;

pub use band::FrequencyBand;
pub use error::{Error, Result};
pub use herm::HermitianMatrix;
pub use lti::{Sinusoid, StateSpace};
pub use solver::{SolveStatus, SolverSettings, SolverSolution};
