//! Solver handles: anything that advances a state by a fixed interval can be
//! plugged into parareal, sampling, and evaluation the same way.

use std::sync::Arc;

use crate::error::Result;
use crate::integrators::{advance, IntegratorSpec};
use crate::state::PhaseState;
use crate::system::HamiltonianSystem;

/// A solution map u -> Phi(u) with fixed interval length.
pub trait SolutionMap: Send + Sync {
    fn dt(&self) -> f64;

    fn apply(&self, u: &PhaseState) -> Result<PhaseState>;

    fn label(&self) -> String;
}

/// Numerical integrator packaged as a solution map.
pub struct IntegratorMap {
    system: Arc<dyn HamiltonianSystem>,
    spec: IntegratorSpec,
    dt: f64,
}

impl IntegratorMap {
    pub fn new(system: Arc<dyn HamiltonianSystem>, spec: IntegratorSpec, dt: f64) -> Result<IntegratorMap> {
        // fail fast on a non-integral substep count
        crate::integrators::substep_count(dt, spec.h)?;
        Ok(IntegratorMap { system, spec, dt })
    }

    pub fn spec(&self) -> &IntegratorSpec {
        &self.spec
    }

    pub fn system(&self) -> &Arc<dyn HamiltonianSystem> {
        &self.system
    }
}

impl SolutionMap for IntegratorMap {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn apply(&self, u: &PhaseState) -> Result<PhaseState> {
        advance(self.system.as_ref(), u, self.dt, &self.spec)
    }

    fn label(&self) -> String {
        self.spec.label()
    }
}

/// Sequential trajectory [u0, Phi u0, ..., Phi^n u0].
pub fn apply_sequence(map: &dyn SolutionMap, u0: &PhaseState, n: usize) -> Result<Vec<PhaseState>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(u0.clone());
    for _ in 0..n {
        let next = map.apply(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}
