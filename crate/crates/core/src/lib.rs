//! Simulation of photon-pair transport through a perturbed multimode fiber.
//!
//! The library models a graded-index fiber whose guided modes are mixed by a
//! bank of mechanical actuators pressing on the fiber. A spontaneous
//! parametric down-conversion source feeds correlated photon pairs into the
//! fiber; the output speckle of single counts and coincidence counts is
//! rendered on a detection grid, and a particle-swarm optimizer drives the
//! actuators to concentrate the quantum correlations at chosen detectors.
//!
//! Module map:
//! - [`modes`]: Laguerre-Gauss mode basis of the fiber, field rendering, and
//!   detector collection overlaps.
//! - [`fiber`]: actuator bank, static mode-mixing segments, transmission
//!   matrices, and speckle correlation.
//! - [`quantum`]: photon-pair Schmidt state, heralding, singles/coincidence
//!   maps, speckle contrast, and Schmidt-number estimation.
//! - [`optimize`]: bounded particle-swarm optimizer and the feedback cost
//!   functions.
//! - [`metrics`]: disorder baselines, enhancement factors, and the
//!   enhancement decomposition report.
//! - [`io`]: deterministic CSV / JSON / PGM writers and matrix export.
//! - [`seeds`]: deterministic derivation of per-task RNG streams.

pub mod fiber;
pub mod io;
pub mod metrics;
pub mod modes;
pub mod optimize;
pub mod quantum;
pub mod seeds;

pub use fiber::{ActuatorBank, FiberModel, LossModel, TransmissionMatrix};
pub use modes::{ComplexField, DetectorSpec, FiberSpec, GridSpec, ModeBasis};
pub use quantum::{HeraldedState, TwoPhotonState};
