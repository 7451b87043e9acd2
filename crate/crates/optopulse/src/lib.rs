//! Simulation and analysis toolkit for pulsed optomechanical position
//! measurement.
//!
//! A short optical pulse reflecting off a mechanical oscillator picks up a
//! phase shift proportional to the mechanical position and kicks the
//! mechanical momentum. Homodyne detection of the pulse phase quadrature
//! yields an outcome that both samples and conditions the mechanical state.
//! This crate models the full chain at the Gaussian level:
//!
//! - [`mech`] — mechanical oscillator parameters and Gaussian states in
//!   dimensionless quadratures, harmonic evolution, rethermalization.
//! - [`pulse`] — pulsed measurement strength and momentum kick, outcome
//!   sampling with layered noise, exact and approximate conditional updates.
//! - [`protocol`] — preparation/read-out pulse sequences, outcome
//!   transformations, correlated classical phase noise, width sweeps.
//! - [`tomo`] — marginal histograms, optical-noise subtraction,
//!   symmetrization, and filtered back-projection reconstruction.
//! - [`noise`] — conditional-variance scans against total photon number and
//!   linear/quadratic model discrimination.
//! - [`modal`] — optically probed effective mass from discretized mode
//!   shapes and a Gaussian beam profile.
//! - [`calib`] — piezo fringe calibration and outcome-per-meter fits.
//! - [`scenario`] / [`report`] — config-driven runs with deterministic,
//!   seed-stamped outputs (see the `optopulse` binary).
//!
//! Quadrature convention, fixed for the whole crate: the ground-state
//! variance of each dimensionless quadrature is 1/2, physical position is
//! `x = sqrt(2) * x0 * X_M`, and a thermal state has variance `n_bar + 1/2`
//! per quadrature. Optical shot noise on a pulse outcome is 1/2 in the same
//! units.

pub mod calib;
pub mod constants;
pub mod error;
pub mod mech;
pub mod modal;
pub mod noise;
pub mod protocol;
pub mod pulse;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod tomo;

pub use error::{Error, Result};
pub use mech::{Cov2, MechGaussianState, OscillatorParams};
pub use protocol::{InitialState, PrepPulse, ProtocolSpec, RunRecord};
pub use pulse::{NoiseSpec, PulseOutcome, PulseSpec};
