//! Pilot-wave (de Broglie-Bohm) trajectory simulation.
//!
//! Beables are moved along the integral curves of `j / rho`. The crate covers
//! non-relativistic spin-s currents, grid and closed-form propagation,
//! equilibrium sampling and trajectory integration, Dirac and
//! Duffin-Kemmer-Petiau plane-wave fields, a decaying two-particle system with
//! a thin-lens imaging stage, and bosonic field-mode beables.
//!
//! Internal computations use natural units (hbar = 1, and c = 1 for the
//! relativistic modules) unless a [`UnitSystem`] says otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod benchmarks;
pub mod currents;
pub mod decay;
pub mod dkp;
pub mod error;
pub mod evolve;
pub mod fieldmodes;
pub mod grid;
pub mod guide;
pub mod matrices;
pub mod reldirac;
pub mod stats;
pub mod units;
pub mod wavefunction;

pub use currents::{CurrentSample, EmPotential, SpinSpec};
pub use error::{Category, Error, Result};
pub use grid::{Axis, Grid};
pub use guide::{BeableConfig, Ensemble, Status, TrajectoryRecord};
pub use matrices::{build_matrix_set, MatrixKind, MatrixSet};
pub use units::UnitSystem;
pub use wavefunction::{Family, WaveFunction, C64};
