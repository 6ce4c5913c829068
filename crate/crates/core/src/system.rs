//! Hamiltonian-system abstraction, the FPU lattice instance, energy
//! transforms, and error/energy metrics.

use nalgebra::DMatrix;

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::state::{EnergyVector, PhaseState};

/// Scalar abstraction over `f64` and double-double so integrator kernels are
/// written once. Gradient evaluation dispatches through the scalar type to
/// keep [`HamiltonianSystem`] object safe.
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn grad_potential_into(system: &dyn HamiltonianSystem, q: &[Self], grad: &mut [Self]);
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn grad_potential_into(system: &dyn HamiltonianSystem, q: &[f64], grad: &mut [f64]) {
        system.grad_potential(q, grad);
    }
}

impl Real for Dd {
    #[inline]
    fn from_f64(x: f64) -> Dd {
        Dd::from_f64(x)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        Dd::to_f64(self)
    }
    #[inline]
    fn grad_potential_into(system: &dyn HamiltonianSystem, q: &[Dd], grad: &mut [Dd]) {
        system.grad_potential_dd(q, grad);
    }
}

/// Separable Hamiltonian system H(p, q) = 1/2 p^T M^-1 p + U(q) with diagonal
/// mass matrix. The energy transform, when a system has one, is hand-coded per
/// system.
pub trait HamiltonianSystem: Send + Sync {
    fn dim(&self) -> usize;

    /// Diagonal of the mass matrix M; entries strictly positive.
    fn mass_diag(&self) -> &[f64];

    fn potential(&self, q: &[f64]) -> f64;

    /// Writes grad U(q) into `grad`.
    fn grad_potential(&self, q: &[f64], grad: &mut [f64]);

    /// Extended-precision gradient for double-double integration.
    fn grad_potential_dd(&self, q: &[Dd], grad: &mut [Dd]);

    fn energy_transform(&self) -> Option<&dyn EnergyTransform> {
        None
    }

    fn label(&self) -> &str;
}

/// Per-system map from phase space into the vector whose squared norm equals
/// the Hamiltonian. Layout: momentum block first, position block after.
pub trait EnergyTransform: Send + Sync {
    fn lambda_dim(&self) -> usize;

    /// Length of the leading momentum block (= d).
    fn momentum_len(&self) -> usize;

    fn apply(&self, u: &PhaseState) -> EnergyVector;

    /// Exact inverse of the momentum block.
    fn invert_momentum(&self, v: &[f64], p: &mut [f64]);

    /// Residual of the position block: Lambda_2(q) - target.
    fn position_residual(&self, q: &[f64], target: &[f64], out: &mut [f64]);

    /// Jacobian d Lambda_2 / d q, shape (lambda_dim - d) x d.
    fn position_jacobian(&self, q: &[f64], jac: &mut DMatrix<f64>);

    /// out = (d Lambda / d [p, q])^T v, needed for energy-balanced losses.
    fn jacobian_transpose_apply(&self, u: &PhaseState, v: &[f64], out: &mut [f64]);
}

/// H(p, q) = 1/2 p^T M^-1 p + U(q). Errors on dimension mismatch.
pub fn hamiltonian(system: &dyn HamiltonianSystem, u: &PhaseState) -> Result<f64> {
    check_dim(system, u)?;
    let kinetic: f64 = u
        .p()
        .iter()
        .zip(system.mass_diag())
        .map(|(p, m)| 0.5 * p * p / m)
        .sum();
    Ok(kinetic + system.potential(u.q()))
}

/// Hamilton's equations: returns (dq, dp) = (M^-1 p, -grad U(q)).
pub fn hamiltonian_vector_field(
    system: &dyn HamiltonianSystem,
    u: &PhaseState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(system, u)?;
    let dq: Vec<f64> = u
        .p()
        .iter()
        .zip(system.mass_diag())
        .map(|(p, m)| p / m)
        .collect();
    let mut dp = vec![0.0; system.dim()];
    system.grad_potential(u.q(), &mut dp);
    for g in dp.iter_mut() {
        *g = -*g;
    }
    Ok((dq, dp))
}

/// sqrt(|p - p_ref|^2 + |q - q_ref|^2).
pub fn trajectory_error(u: &PhaseState, u_ref: &PhaseState) -> Result<f64> {
    if u.dim() != u_ref.dim() {
        return Err(Error::DimensionMismatch {
            expected: u_ref.dim(),
            got: u.dim(),
            context: "trajectory_error",
        });
    }
    Ok(u.distance(u_ref))
}

/// |H(u) - H(u_ref)| / |H(u_ref)|. Errors when the reference energy is zero.
pub fn energy_error(system: &dyn HamiltonianSystem, u: &PhaseState, u_ref: &PhaseState) -> Result<f64> {
    let h_ref = hamiltonian(system, u_ref)?;
    if h_ref == 0.0 {
        return Err(Error::DivisionByZero("energy_error reference energy"));
    }
    let h = hamiltonian(system, u)?;
    Ok((h - h_ref).abs() / h_ref.abs())
}

fn check_dim(system: &dyn HamiltonianSystem, u: &PhaseState) -> Result<()> {
    if u.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            got: u.dim(),
            context: "state dimension vs system",
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// FPU lattice
// ---------------------------------------------------------------------------

/// Chain of 2m mass points joined by alternating stiff linear springs
/// (frequency omega) and soft quartic springs, with fixed ends
/// q_0 = q_{2m+1} = 0.
#[derive(Debug, Clone)]
pub struct FpuSystem {
    m: usize,
    omega: f64,
    mass: Vec<f64>,
    transform: FpuTransform,
}

impl FpuSystem {
    pub fn new(m: usize, omega: f64) -> Result<FpuSystem> {
        if m == 0 || !omega.is_finite() || omega <= 0.0 {
            return Err(Error::Config(format!(
                "FPU system needs m >= 1 and omega > 0, got m={m}, omega={omega}"
            )));
        }
        Ok(FpuSystem {
            m,
            omega,
            mass: vec![1.0; 2 * m],
            transform: FpuTransform { m, omega },
        })
    }

    pub fn pair_count(&self) -> usize {
        self.m
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// The standard excited-first-stiff-spring initial condition:
    /// p = (0, sqrt2, 0, ...), q = ((1 - 1/omega)/sqrt2, (1 + 1/omega)/sqrt2, 0, ...).
    pub fn canonical_initial_state(&self) -> PhaseState {
        let d = 2 * self.m;
        let mut p = vec![0.0; d];
        let mut q = vec![0.0; d];
        let s = 2.0_f64.sqrt();
        p[1] = s;
        q[0] = (1.0 - 1.0 / self.omega) / s;
        q[1] = (1.0 + 1.0 / self.omega) / s;
        PhaseState::from_parts(p, q)
    }

    /// Energy of the canonical initial state: 2 + 3/omega^2 + 1/(2 omega^4).
    pub fn canonical_energy(&self) -> f64 {
        let w2 = self.omega * self.omega;
        2.0 + 3.0 / w2 + 0.5 / (w2 * w2)
    }
}

/// Spring extension helpers over 0-based coordinates. In 1-based paper
/// indexing the stiff pairs are (q_{2i} - q_{2i-1}), i = 1..m, and the soft
/// gaps (q_{2i+1} - q_{2i}), i = 0..m, with q_0 = q_{2m+1} = 0.
#[inline]
fn stiff_ext<R: Real>(q: &[R], j: usize) -> R {
    q[2 * j + 1] - q[2 * j]
}

#[inline]
fn soft_ext<R: Real>(q: &[R], m: usize, i: usize) -> R {
    let zero = R::from_f64(0.0);
    let left = if i < m { q[2 * i] } else { zero };
    let right = if i > 0 { q[2 * i - 1] } else { zero };
    left - right
}

fn fpu_potential<R: Real>(m: usize, omega: f64, q: &[R]) -> R {
    let k = R::from_f64(omega * omega / 4.0);
    let mut stiff = R::from_f64(0.0);
    for j in 0..m {
        let d = stiff_ext(q, j);
        stiff = stiff + d * d;
    }
    let mut soft = R::from_f64(0.0);
    for i in 0..=m {
        let d = soft_ext(q, m, i);
        let d2 = d * d;
        soft = soft + d2 * d2;
    }
    k * stiff + soft
}

fn fpu_grad<R: Real>(m: usize, omega: f64, q: &[R], grad: &mut [R]) {
    let zero = R::from_f64(0.0);
    for g in grad.iter_mut() {
        *g = zero;
    }
    let k = R::from_f64(omega * omega / 2.0);
    for j in 0..m {
        let t = k * stiff_ext(q, j);
        grad[2 * j + 1] = grad[2 * j + 1] + t;
        grad[2 * j] = grad[2 * j] - t;
    }
    let four = R::from_f64(4.0);
    for i in 0..=m {
        let d = soft_ext(q, m, i);
        let t = four * (d * d * d);
        if i < m {
            grad[2 * i] = grad[2 * i] + t;
        }
        if i > 0 {
            grad[2 * i - 1] = grad[2 * i - 1] - t;
        }
    }
}

impl HamiltonianSystem for FpuSystem {
    fn dim(&self) -> usize {
        2 * self.m
    }

    fn mass_diag(&self) -> &[f64] {
        &self.mass
    }

    fn potential(&self, q: &[f64]) -> f64 {
        fpu_potential(self.m, self.omega, q)
    }

    fn grad_potential(&self, q: &[f64], grad: &mut [f64]) {
        fpu_grad(self.m, self.omega, q, grad);
    }

    fn grad_potential_dd(&self, q: &[Dd], grad: &mut [Dd]) {
        fpu_grad(self.m, self.omega, q, grad);
    }

    fn energy_transform(&self) -> Option<&dyn EnergyTransform> {
        Some(&self.transform)
    }

    fn label(&self) -> &str {
        "fpu"
    }
}

/// FPU energy transform into R^{4m+1}: [p/sqrt2; (omega/2) stiff gaps; soft gaps squared].
#[derive(Debug, Clone)]
pub struct FpuTransform {
    m: usize,
    omega: f64,
}

impl EnergyTransform for FpuTransform {
    fn lambda_dim(&self) -> usize {
        4 * self.m + 1
    }

    fn momentum_len(&self) -> usize {
        2 * self.m
    }

    fn apply(&self, u: &PhaseState) -> EnergyVector {
        let m = self.m;
        let inv_s = 1.0 / 2.0_f64.sqrt();
        let mut v = Vec::with_capacity(4 * m + 1);
        for p in u.p() {
            v.push(p * inv_s);
        }
        let q = u.q();
        for j in 0..m {
            v.push(0.5 * self.omega * stiff_ext(q, j));
        }
        for i in 0..=m {
            let d = soft_ext(q, m, i);
            v.push(d * d);
        }
        EnergyVector(v)
    }

    fn invert_momentum(&self, v: &[f64], p: &mut [f64]) {
        let s = 2.0_f64.sqrt();
        for (pi, vi) in p.iter_mut().zip(v) {
            *pi = s * vi;
        }
    }

    fn position_residual(&self, q: &[f64], target: &[f64], out: &mut [f64]) {
        let m = self.m;
        for j in 0..m {
            out[j] = 0.5 * self.omega * stiff_ext(q, j) - target[j];
        }
        for i in 0..=m {
            let d = soft_ext(q, m, i);
            out[m + i] = d * d - target[m + i];
        }
    }

    fn position_jacobian(&self, q: &[f64], jac: &mut DMatrix<f64>) {
        let m = self.m;
        jac.fill(0.0);
        for j in 0..m {
            jac[(j, 2 * j + 1)] = 0.5 * self.omega;
            jac[(j, 2 * j)] = -0.5 * self.omega;
        }
        for i in 0..=m {
            let t = 2.0 * soft_ext(q, m, i);
            if i < m {
                jac[(m + i, 2 * i)] = t;
            }
            if i > 0 {
                jac[(m + i, 2 * i - 1)] = -t;
            }
        }
    }

    fn jacobian_transpose_apply(&self, u: &PhaseState, v: &[f64], out: &mut [f64]) {
        let m = self.m;
        let d = 2 * m;
        let inv_s = 1.0 / 2.0_f64.sqrt();
        for x in out.iter_mut() {
            *x = 0.0;
        }
        for i in 0..d {
            out[i] = v[i] * inv_s;
        }
        let q = u.q();
        for j in 0..m {
            let w = 0.5 * self.omega * v[d + j];
            out[d + 2 * j + 1] += w;
            out[d + 2 * j] -= w;
        }
        for i in 0..=m {
            let t = 2.0 * soft_ext(q, m, i) * v[d + m + i];
            if i < m {
                out[d + 2 * i] += t;
            }
            if i > 0 {
                out[d + 2 * i - 1] -= t;
            }
        }
    }
}

/// Per-spring stiff energies I_j = 1/2 (ydot_j^2 + omega^2 y_j^2) with
/// y_j = (q_{2j} - q_{2j-1})/sqrt2 in transformed coordinates, plus their
/// total as the last entry.
pub fn stiff_spring_energies(system: &FpuSystem, u: &PhaseState) -> Result<Vec<f64>> {
    check_dim(system, u)?;
    let m = system.m;
    let w2 = system.omega * system.omega;
    let mut out = Vec::with_capacity(m + 1);
    let mut total = 0.0;
    for j in 0..m {
        let y = stiff_ext(u.q(), j) / 2.0_f64.sqrt();
        let ydot = (u.p()[2 * j + 1] - u.p()[2 * j]) / 2.0_f64.sqrt();
        let e = 0.5 * (ydot * ydot + w2 * y * y);
        out.push(e);
        total += e;
    }
    out.push(total);
    Ok(out)
}

// ---------------------------------------------------------------------------
// 1D harmonic oscillator (test system with a linear energy transform)
// ---------------------------------------------------------------------------

/// H(p, q) = p^2/2 + q^2/2 with Lambda = (p/sqrt2, q/sqrt2).
#[derive(Debug, Clone)]
pub struct HarmonicOscillator {
    mass: [f64; 1],
    transform: HarmonicTransform,
}

impl HarmonicOscillator {
    pub fn new() -> HarmonicOscillator {
        HarmonicOscillator {
            mass: [1.0],
            transform: HarmonicTransform,
        }
    }
}

impl Default for HarmonicOscillator {
    fn default() -> Self {
        Self::new()
    }
}

impl HamiltonianSystem for HarmonicOscillator {
    fn dim(&self) -> usize {
        1
    }

    fn mass_diag(&self) -> &[f64] {
        &self.mass
    }

    fn potential(&self, q: &[f64]) -> f64 {
        0.5 * q[0] * q[0]
    }

    fn grad_potential(&self, q: &[f64], grad: &mut [f64]) {
        grad[0] = q[0];
    }

    fn grad_potential_dd(&self, q: &[Dd], grad: &mut [Dd]) {
        grad[0] = q[0];
    }

    fn energy_transform(&self) -> Option<&dyn EnergyTransform> {
        Some(&self.transform)
    }

    fn label(&self) -> &str {
        "harmonic"
    }
}

#[derive(Debug, Clone)]
struct HarmonicTransform;

impl EnergyTransform for HarmonicTransform {
    fn lambda_dim(&self) -> usize {
        2
    }

    fn momentum_len(&self) -> usize {
        1
    }

    fn apply(&self, u: &PhaseState) -> EnergyVector {
        let inv_s = 1.0 / 2.0_f64.sqrt();
        EnergyVector(vec![u.p()[0] * inv_s, u.q()[0] * inv_s])
    }

    fn invert_momentum(&self, v: &[f64], p: &mut [f64]) {
        p[0] = 2.0_f64.sqrt() * v[0];
    }

    fn position_residual(&self, q: &[f64], target: &[f64], out: &mut [f64]) {
        out[0] = q[0] / 2.0_f64.sqrt() - target[0];
    }

    fn position_jacobian(&self, _q: &[f64], jac: &mut DMatrix<f64>) {
        jac[(0, 0)] = 1.0 / 2.0_f64.sqrt();
    }

    fn jacobian_transpose_apply(&self, _u: &PhaseState, v: &[f64], out: &mut [f64]) {
        let inv_s = 1.0 / 2.0_f64.sqrt();
        out[0] = v[0] * inv_s;
        out[1] = v[1] * inv_s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_fpu() -> FpuSystem {
        FpuSystem::new(3, 300.0).unwrap()
    }

    #[test]
    fn canonical_energy_matches_closed_form() {
        // H(test state) = 2 + 3 w^-2 + w^-4 / 2
        let sys = test_fpu();
        let u = sys.canonical_initial_state();
        let h = hamiltonian(&sys, &u).unwrap();
        assert_relative_eq!(h, sys.canonical_energy(), max_relative = 1e-14);
    }

    #[test]
    fn zero_state_has_zero_energy() {
        let sys = test_fpu();
        let u = PhaseState::zeros(6);
        assert_eq!(hamiltonian(&sys, &u).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_soft_chain() {
        // m=1, omega=2, p=0, q=(1,1): stiff gap 0, soft gaps 1 and -1
        // U = (1-0)^4 + (0-1)^4 = 2
        let sys = FpuSystem::new(1, 2.0).unwrap();
        let u = PhaseState::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(hamiltonian(&sys, &u).unwrap(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn vector_field_at_origin() {
        let sys = FpuSystem::new(1, 1.0).unwrap();
        let u = PhaseState::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let (dq, dp) = hamiltonian_vector_field(&sys, &u).unwrap();
        assert_eq!(dq, vec![1.0, 2.0]);
        assert_eq!(dp, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sys = test_fpu();
        let mut rng = 0x12345u64;
        let mut rand = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64 / 2_f64.powi(31)) - 1.0
        };
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rand()).collect();
            let mut grad = vec![0.0; 6];
            sys.grad_potential(&q, &mut grad);
            for i in 0..6 {
                let h = 1e-6 * q[i].abs().max(1.0);
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let fd = (sys.potential(&qp) - sys.potential(&qm)) / (2.0 * h);
                let scale = grad[i].abs().max(1.0);
                assert!(
                    (grad[i] - fd).abs() / scale <= 1e-6,
                    "component {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn lambda_norm_equals_hamiltonian() {
        let sys = test_fpu();
        let t = sys.energy_transform().unwrap();
        let mut rng = 0x9876543u64;
        let mut rand = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64 / 2_f64.powi(31)) - 1.0
        };
        for _ in 0..10_000 {
            let p: Vec<f64> = (0..6).map(|_| rand()).collect();
            let q: Vec<f64> = (0..6).map(|_| rand()).collect();
            let u = PhaseState::from_parts(p, q);
            let h = hamiltonian(&sys, &u).unwrap();
            let n2 = t.apply(&u).norm_squared();
            assert!((n2 - h).abs() <= 1e-12 * h.abs().max(1.0));
        }
    }

    #[test]
    fn lambda_of_canonical_state() {
        let sys = test_fpu();
        let u = sys.canonical_initial_state();
        let n2 = sys.energy_transform().unwrap().apply(&u).norm_squared();
        assert_relative_eq!(n2, sys.canonical_energy(), max_relative = 1e-12);
    }

    #[test]
    fn lambda_zero_state() {
        let sys = test_fpu();
        let v = sys.energy_transform().unwrap().apply(&PhaseState::zeros(6));
        assert_eq!(v.len(), 13);
        assert!(v.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn harmonic_lambda_forms() {
        let sys = HarmonicOscillator::new();
        let u = PhaseState::new(vec![0.6], vec![-0.8]).unwrap();
        let v = sys.energy_transform().unwrap().apply(&u);
        let s = 2.0_f64.sqrt();
        assert_relative_eq!(v.as_slice()[0], 0.6 / s);
        assert_relative_eq!(v.as_slice()[1], -0.8 / s);
        assert_relative_eq!(v.norm_squared(), hamiltonian(&sys, &u).unwrap(), max_relative = 1e-15);
    }

    #[test]
    fn trajectory_error_pythagorean() {
        let a = PhaseState::new(vec![3.0, 4.0, 0.0], vec![0.0, 0.0, 0.0]).unwrap();
        let b = PhaseState::zeros(3);
        assert_relative_eq!(trajectory_error(&a, &b).unwrap(), 5.0);
        assert_eq!(trajectory_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn energy_error_formula() {
        // direct formula: |2.2 - 2.0| / 2.0 = 0.1, built from scaled harmonic states
        let sys = HarmonicOscillator::new();
        let u_ref = PhaseState::new(vec![2.0], vec![0.0]).unwrap(); // H = 2.0
        let u = PhaseState::new(vec![(2.0 * 2.2_f64).sqrt()], vec![0.0]).unwrap(); // H = 2.2
        assert_relative_eq!(energy_error(&sys, &u, &u_ref).unwrap(), 0.1, max_relative = 1e-12);
        assert_eq!(energy_error(&sys, &u_ref, &u_ref).unwrap(), 0.0);
        let zero = PhaseState::zeros(1);
        assert!(energy_error(&sys, &u, &zero).is_err());
    }

    #[test]
    fn stiff_energies_at_canonical_state() {
        // hand algebra: y_1 = 1/omega, ydot_1 = 1 => I_1 = (1 + 1)/2 = 1, others 0
        let sys = test_fpu();
        let u = sys.canonical_initial_state();
        let e = stiff_spring_energies(&sys, &u).unwrap();
        assert_eq!(e.len(), 4);
        assert_relative_eq!(e[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(e[1], 0.0);
        assert_relative_eq!(e[2], 0.0);
        assert_relative_eq!(e[3], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn stiff_energies_zero_state() {
        let sys = test_fpu();
        let e = stiff_spring_energies(&sys, &PhaseState::zeros(6)).unwrap();
        assert!(e.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn dd_gradient_agrees_with_f64() {
        let sys = test_fpu();
        let q: Vec<f64> = vec![0.3, -0.2, 0.15, 0.4, -0.6, 0.05];
        let mut g = vec![0.0; 6];
        sys.grad_potential(&q, &mut g);
        let qd: Vec<Dd> = q.iter().map(|x| Dd::from_f64(*x)).collect();
        let mut gd = vec![Dd::ZERO; 6];
        sys.grad_potential_dd(&qd, &mut gd);
        for i in 0..6 {
            assert_relative_eq!(g[i], gd[i].to_f64(), max_relative = 1e-14);
        }
    }

    /// Negative potential, no valid energy transform (2D Kepler).
    struct KeplerLike {
        mass: [f64; 2],
    }

    impl HamiltonianSystem for KeplerLike {
        fn dim(&self) -> usize {
            2
        }
        fn mass_diag(&self) -> &[f64] {
            &self.mass
        }
        fn potential(&self, q: &[f64]) -> f64 {
            -1.0 / (q[0] * q[0] + q[1] * q[1]).sqrt()
        }
        fn grad_potential(&self, q: &[f64], grad: &mut [f64]) {
            let r2 = q[0] * q[0] + q[1] * q[1];
            let r3 = r2 * r2.sqrt();
            grad[0] = q[0] / r3;
            grad[1] = q[1] / r3;
        }
        fn grad_potential_dd(&self, q: &[Dd], grad: &mut [Dd]) {
            let r2 = q[0] * q[0] + q[1] * q[1];
            let r3 = r2 * r2.sqrt();
            grad[0] = q[0] / r3;
            grad[1] = q[1] / r3;
        }
        fn label(&self) -> &str {
            "kepler"
        }
    }

    #[test]
    fn negative_potential_system_has_no_transform() {
        let sys = KeplerLike { mass: [1.0, 1.0] };
        assert!(sys.energy_transform().is_none());
        let u = PhaseState::new(vec![0.0, 0.5], vec![1.0, 0.0]).unwrap();
        let target = crate::state::EnergyVector(vec![0.0; 4]);
        let err = crate::pinv::energy_transform_pinv(
            &sys,
            &target,
            &u,
            crate::pinv::PinvSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, crate::error::Error::UnsupportedTransform));
    }

    #[test]
    fn energy_error_invariant_under_equal_energy_replacement() {
        // flipping momenta preserves H exactly, so the error is unchanged
        let sys = test_fpu();
        let u_ref = sys.canonical_initial_state();
        let u = PhaseState::new(
            vec![0.1, 1.3, -0.2, 0.0, 0.4, 0.0],
            u_ref.q().to_vec(),
        )
        .unwrap();
        let e1 = energy_error(&sys, &u, &u_ref).unwrap();
        let flipped = PhaseState::new(u.p().iter().map(|x| -x).collect(), u.q().to_vec()).unwrap();
        let e2 = energy_error(&sys, &flipped, &u_ref).unwrap();
        assert_eq!(e1, e2);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn state(d: usize) -> impl Strategy<Value = PhaseState> {
            (
                proptest::collection::vec(-10.0..10.0f64, d),
                proptest::collection::vec(-10.0..10.0f64, d),
            )
                .prop_map(|(p, q)| PhaseState::from_parts(p, q))
        }

        proptest! {
            #[test]
            fn trajectory_error_is_a_metric((a, b, c) in (state(4), state(4), state(4))) {
                let ab = trajectory_error(&a, &b).unwrap();
                let ba = trajectory_error(&b, &a).unwrap();
                prop_assert!((ab - ba).abs() <= 1e-15 * ab.max(1.0));
                let ac = trajectory_error(&a, &c).unwrap();
                let cb = trajectory_error(&c, &b).unwrap();
                prop_assert!(ab <= ac + cb + 1e-12);
                prop_assert!(trajectory_error(&a, &a).unwrap() == 0.0);
            }

            #[test]
            fn trajectory_error_matches_concatenation_oracle((a, b) in (state(5), state(5))) {
                let direct: f64 = a
                    .concat()
                    .iter()
                    .zip(b.concat())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                let via = trajectory_error(&a, &b).unwrap();
                prop_assert!((direct - via).abs() <= 1e-12 * direct.max(1.0));
            }

            #[test]
            fn lambda_identity_on_arbitrary_states(u in state(6)) {
                let sys = FpuSystem::new(3, 300.0).unwrap();
                let h = hamiltonian(&sys, &u).unwrap();
                let n2 = sys.energy_transform().unwrap().apply(&u).norm_squared();
                prop_assert!((n2 - h).abs() <= 1e-12 * h.abs().max(1.0));
            }
        }
    }
}
