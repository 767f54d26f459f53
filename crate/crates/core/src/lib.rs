//! Three-mode model of degenerate four-wave mixing in a whispering-gallery
//! resonator: a driven pump mode, a high-Q idler mode and a lossy signal
//! resonance at `Ω₊ = 2Ω₀ − Ω₋`.
//!
//! * [`model`] holds the physical parameters and unit conversions.
//! * [`dynamics`] has the amplitude equations and the time integrator.
//! * [`analysis`] finds steady states, thresholds and effective
//!   nonlinearities, and runs sweeps.
//! * [`cli`] is the command-line front end (`fwm`).

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod model;
pub mod ode;

pub use model::{FieldState, ModeParams, PumpDrive, Role, SeedConfig, SystemConfig, C64};
