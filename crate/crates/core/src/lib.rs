//! Enhanced shortcuts to adiabaticity for anharmonic trap expansion.
//!
//! The crate builds invariant-based STA expansion schedules, corrects them
//! perturbatively with the first-order (`eSTA1`) and Hessian-based (`eSTA2`)
//! schemes, and checks every schedule against a split-operator solution of the
//! 1D Schrödinger equation.

pub mod config;
pub mod engine;
pub mod error;
pub mod hermite;
pub mod output;
pub mod scans;
pub mod schedule;
pub mod tdse;
pub mod trap;

pub use error::{Error, Result};
pub use schedule::{ControlSchedule, ExpansionProblem, InvariantMode, ScalingFunction};
pub use trap::{TrapFamily, TrapPotential, TrapShape};
