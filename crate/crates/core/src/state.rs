//! Phase-space state and energy-transform image vectors.

use crate::error::{Error, Result};

/// Momentum/position pair `(p, q)` of equal length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    p: Vec<f64>,
    q: Vec<f64>,
}

impl PhaseState {
    /// Build a state, validating equal lengths and finiteness.
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<PhaseState> {
        if p.len() != q.len() || p.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                got: q.len(),
                context: "PhaseState momenta vs positions",
            });
        }
        if !p.iter().chain(q.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: "PhaseState entries".into(),
            });
        }
        Ok(PhaseState { p, q })
    }

    /// Internal constructor for hot paths that already guarantee shape.
    pub(crate) fn from_parts(p: Vec<f64>, q: Vec<f64>) -> PhaseState {
        debug_assert_eq!(p.len(), q.len());
        PhaseState { p, q }
    }

    pub fn zeros(d: usize) -> PhaseState {
        PhaseState {
            p: vec![0.0; d],
            q: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|x| x.is_finite())
    }

    /// Concatenation `u = [p, q]`.
    pub fn concat(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(2 * self.p.len());
        u.extend_from_slice(&self.p);
        u.extend_from_slice(&self.q);
        u
    }

    /// Inverse of [`concat`](Self::concat).
    pub fn from_concat(u: &[f64]) -> Result<PhaseState> {
        if u.len() % 2 != 0 || u.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: u.len() + 1,
                got: u.len(),
                context: "concatenated state must have even length",
            });
        }
        let d = u.len() / 2;
        PhaseState::new(u[..d].to_vec(), u[d..].to_vec())
    }

    /// Euclidean distance in the concatenated space.
    pub fn distance(&self, other: &PhaseState) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .chain(self.q.iter().zip(&other.q))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Image of the energy transform; its squared norm equals the Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector(pub Vec<f64>);

impl EnergyVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}
