//! Parallel-in-time simulation toolkit for separable Hamiltonian systems:
//! symplectic integrators with optional double-double arithmetic, the
//! parareal iteration with an online Procrustes phase corrector, phase-space
//! samplers concentrated on an energy level set, and a small ResNet surrogate
//! solver trained on flow data.

pub mod dd;
pub mod error;
pub mod integrators;
pub mod nn;
pub mod parareal;
pub mod pinv;
pub mod report;
pub mod sampling;
pub mod procrustes;
pub mod solver;
pub mod state;
pub mod system;

pub use dd::Dd;
pub use error::{Error, Result};
pub use state::{EnergyVector, PhaseState};
