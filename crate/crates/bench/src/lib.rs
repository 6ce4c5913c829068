//! Shared fixtures for the solver micro-benchmarks.

use std::sync::Arc;

use pint_core::state::PhaseState;
use pint_core::system::FpuSystem;

/// The standard benchmark system and starting state.
pub fn bench_fixture() -> (Arc<FpuSystem>, PhaseState) {
    let sys = Arc::new(FpuSystem::new(3, 300.0).expect("valid system"));
    let u0 = sys.canonical_initial_state();
    (sys, u0)
}
