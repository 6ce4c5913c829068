//! Pseudo-inverse of the energy transform: exact momentum recovery plus a
//! damped Gauss-Newton (Levenberg-Marquardt) solve for the position block,
//! warm-started from a caller-supplied state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state::{EnergyVector, PhaseState};
use crate::system::HamiltonianSystem;

#[derive(Debug, Clone, Copy)]
pub struct PinvSettings {
    /// Absolute residual-norm target.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PinvSettings {
    fn default() -> Self {
        PinvSettings {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PinvSolution {
    pub state: PhaseState,
    /// Final position-block residual norm.
    pub residual: f64,
    pub iterations: usize,
}

/// Recover a phase-space state from an energy vector. The momentum block is
/// inverted exactly; positions minimize |Lambda_2(q) - target|^2 seeded at
/// `warm_start.q`. The returned residual never exceeds the warm-start
/// residual.
///
/// A target outside the image of Lambda_2 (e.g. a negative soft-spring
/// component) has a nonzero residual floor; the solver then stops at the
/// stationary point and reports it through `Error::PinvConvergence`, which
/// carries the best iterate so callers can accept it.
pub fn energy_transform_pinv(
    system: &dyn HamiltonianSystem,
    target: &EnergyVector,
    warm_start: &PhaseState,
    settings: PinvSettings,
) -> Result<PinvSolution> {
    let transform = system
        .energy_transform()
        .ok_or(Error::UnsupportedTransform)?;
    let d = transform.momentum_len();
    let n_res = transform.lambda_dim() - d;
    if target.len() != transform.lambda_dim() {
        return Err(Error::DimensionMismatch {
            expected: transform.lambda_dim(),
            got: target.len(),
            context: "energy vector vs transform",
        });
    }
    if warm_start.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: warm_start.dim(),
            context: "warm start vs transform",
        });
    }
    if !target.as_slice().iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite {
            context: "pseudo-inverse target".into(),
        });
    }

    let mut p = vec![0.0; d];
    transform.invert_momentum(&target.as_slice()[..d], &mut p);
    let target_q = &target.as_slice()[d..];

    let mut q = warm_start.q().to_vec();
    let mut res = vec![0.0; n_res];
    transform.position_residual(&q, target_q, &mut res);
    let mut cost = norm2(&res);
    let mut best_q = q.clone();
    let mut best_cost = cost;

    if cost.sqrt() <= settings.tol {
        return Ok(PinvSolution {
            state: PhaseState::from_parts(p, q),
            residual: cost.sqrt(),
            iterations: 0,
        });
    }

    let mut jac = DMatrix::zeros(n_res, d);
    let mut lambda = 1e-6;
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < settings.max_iter {
        iterations += 1;
        transform.position_jacobian(&q, &mut jac);
        let r = DVector::from_column_slice(&res);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * r;

        // escalate damping until a step reduces the cost
        let mut accepted = false;
        for _ in 0..16 {
            let mut a = jtj.clone();
            for i in 0..d {
                a[(i, i)] += lambda * (jtj[(i, i)].max(1e-30));
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let q_try: Vec<f64> = q.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
            transform.position_residual(&q_try, target_q, &mut res);
            let cost_try = norm2(&res);
            if cost_try.is_finite() && cost_try < cost {
                let step_small = step.norm() <= 1e-14 * (1.0 + q_norm(&q));
                let decrease = cost - cost_try;
                q = q_try;
                cost = cost_try;
                lambda = (lambda * 0.25).max(1e-14);
                accepted = true;
                if cost < best_cost {
                    best_cost = cost;
                    best_q = q.clone();
                }
                if step_small || decrease <= 1e-16 * cost.max(1e-300) {
                    stalled = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted {
            stalled = true;
        }
        if best_cost.sqrt() <= settings.tol || stalled {
            break;
        }
        // restore residual buffer for the accepted q
        transform.position_residual(&q, target_q, &mut res);
    }

    let residual = best_cost.sqrt();
    let state = PhaseState::from_parts(p, best_q);
    if residual <= settings.tol {
        Ok(PinvSolution {
            state,
            residual,
            iterations,
        })
    } else {
        Err(Error::PinvConvergence {
            state: Box::new(state),
            residual,
            iterations,
        })
    }
}

/// Variant that accepts a stationary point above the residual target,
/// returning the best iterate instead of an error. Hard failures
/// (non-finite data) still propagate.
pub fn energy_transform_pinv_lenient(
    system: &dyn HamiltonianSystem,
    target: &EnergyVector,
    warm_start: &PhaseState,
    settings: PinvSettings,
) -> Result<PinvSolution> {
    match energy_transform_pinv(system, target, warm_start, settings) {
        Ok(sol) => Ok(sol),
        Err(Error::PinvConvergence {
            state,
            residual,
            iterations,
        }) => Ok(PinvSolution {
            state: *state,
            residual,
            iterations,
        }),
        Err(e) => Err(e),
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn q_norm(v: &[f64]) -> f64 {
    norm2(v).sqrt()
}
