//! Orthogonal Procrustes alignment of coarse solutions toward fine solutions
//! in energy-transform space, and the resulting phase corrector
//! Psi = Lambda^+ . Omega . Lambda.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::pinv::{energy_transform_pinv, energy_transform_pinv_lenient, PinvSettings, PinvSolution};
use crate::state::{EnergyVector, PhaseState};
use crate::system::{EnergyTransform, HamiltonianSystem};

/// Paired data matrices with columns f_n = Lambda(fine output) and
/// g_n = Lambda(coarse output).
#[derive(Debug, Clone)]
pub struct AlignmentData {
    pub fine: DMatrix<f64>,
    pub coarse: DMatrix<f64>,
}

impl AlignmentData {
    pub fn new(fine: DMatrix<f64>, coarse: DMatrix<f64>) -> Result<AlignmentData> {
        if fine.shape() != coarse.shape() || fine.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: fine.ncols(),
                got: coarse.ncols(),
                context: "alignment data shapes",
            });
        }
        if !fine.iter().chain(coarse.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: "alignment data".into(),
            });
        }
        Ok(AlignmentData { fine, coarse })
    }

    /// Transform paired state lists through Lambda, one column per pair.
    pub fn from_states(
        transform: &dyn EnergyTransform,
        fine: &[PhaseState],
        coarse: &[PhaseState],
    ) -> Result<AlignmentData> {
        if fine.len() != coarse.len() {
            return Err(Error::DimensionMismatch {
                expected: fine.len(),
                got: coarse.len(),
                context: "fine vs coarse state counts",
            });
        }
        let dim = transform.lambda_dim();
        let mut fm = DMatrix::zeros(dim, fine.len());
        let mut gm = DMatrix::zeros(dim, fine.len());
        for (n, (f, g)) in fine.iter().zip(coarse).enumerate() {
            fm.column_mut(n).copy_from_slice(transform.apply(f).as_slice());
            gm.column_mut(n).copy_from_slice(transform.apply(g).as_slice());
        }
        AlignmentData::new(fm, gm)
    }

    /// Sum of squared column misfits under a candidate orthogonal map.
    pub fn residual(&self, omega: &DMatrix<f64>) -> f64 {
        (&self.fine - omega * &self.coarse).norm_squared()
    }
}

#[derive(Debug, Clone)]
pub struct CorrectorDiagnostics {
    /// Misfit with Omega = I.
    pub residual_before: f64,
    /// Misfit at the minimizer.
    pub residual_after: f64,
    pub min_singular_value: f64,
    /// False when the correlation matrix is rank deficient; the minimizer is
    /// then non-unique but still returned.
    pub full_rank: bool,
}

/// Orthogonal phase corrector with solve diagnostics.
#[derive(Debug, Clone)]
pub struct PhaseCorrector {
    pub omega: DMatrix<f64>,
    pub diagnostics: CorrectorDiagnostics,
}

impl PhaseCorrector {
    pub fn identity(dim: usize) -> PhaseCorrector {
        PhaseCorrector {
            omega: DMatrix::identity(dim, dim),
            diagnostics: CorrectorDiagnostics {
                residual_before: 0.0,
                residual_after: 0.0,
                min_singular_value: 1.0,
                full_rank: true,
            },
        }
    }

    pub fn rotate(&self, v: &EnergyVector) -> EnergyVector {
        let out = &self.omega * DVector::from_column_slice(v.as_slice());
        EnergyVector(out.as_slice().to_vec())
    }
}

/// Minimize sum_n |f_n - Omega g_n|^2 over orthogonal Omega: the minimizer is
/// U V^T from the SVD of the correlation matrix F G^T. Rank-deficient data is
/// flagged, not rejected, so early parareal iterations built from a single
/// trajectory keep running.
pub fn solve_procrustes(data: &AlignmentData) -> Result<PhaseCorrector> {
    let m = &data.fine * data.coarse.transpose();
    let dim = m.nrows();
    let svd = nalgebra::SVD::try_new(m, true, true, 1e-14, 0)
        .ok_or_else(|| Error::SvdFailure("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let omega = u * v_t;
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    let full_rank = sigma_min > 1e-12 * sigma_max.max(1e-300) && sigma_min > 0.0;
    let diagnostics = CorrectorDiagnostics {
        residual_before: data.residual(&DMatrix::identity(dim, dim)),
        residual_after: data.residual(&omega),
        min_singular_value: sigma_min,
        full_rank,
    };
    Ok(PhaseCorrector { omega, diagnostics })
}

/// Apply Psi = Lambda^+ . Omega . Lambda with `u` itself as the warm start,
/// propagating pseudo-inverse non-convergence.
pub fn apply_corrector(
    corrector: &PhaseCorrector,
    system: &dyn HamiltonianSystem,
    u: &PhaseState,
    pinv: PinvSettings,
) -> Result<PinvSolution> {
    let transform = system.energy_transform().ok_or(Error::UnsupportedTransform)?;
    let rotated = corrector.rotate(&transform.apply(u));
    energy_transform_pinv(system, &rotated, u, pinv)
}

/// Like [`apply_corrector`] but accepts the best iterate when the position
/// solve stalls above the residual target (the operating mode inside the
/// parareal sweep).
pub fn apply_corrector_lenient(
    corrector: &PhaseCorrector,
    system: &dyn HamiltonianSystem,
    u: &PhaseState,
    pinv: PinvSettings,
) -> Result<PinvSolution> {
    let transform = system.energy_transform().ok_or(Error::UnsupportedTransform)?;
    let rotated = corrector.rotate(&transform.apply(u));
    energy_transform_pinv_lenient(system, &rotated, u, pinv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{hamiltonian, FpuSystem};

    fn rand_stream(mut seed: u64) -> impl FnMut() -> f64 {
        move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / 2_f64.powi(31)) - 1.0
        }
    }

    fn random_orthogonal(dim: usize, rand: &mut impl FnMut() -> f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| rand());
        let qr = a.qr();
        qr.q()
    }

    /// Cayley transform of a skew matrix with Frobenius norm `scale`.
    fn small_rotation(dim: usize, scale: f64, rand: &mut impl FnMut() -> f64) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..i {
                let x = rand();
                s[(i, j)] = x;
                s[(j, i)] = -x;
            }
        }
        let norm = s.norm();
        if norm > 0.0 {
            s *= scale / norm;
        }
        let eye = DMatrix::identity(dim, dim);
        (&eye - &s * 0.5)
            .try_inverse()
            .expect("Cayley factor invertible")
            * (&eye + &s * 0.5)
    }

    #[test]
    fn aligned_data_gives_identity() {
        let mut rand = rand_stream(11);
        let f = DMatrix::from_fn(4, 9, |_, _| rand());
        let data = AlignmentData::new(f.clone(), f).unwrap();
        let c = solve_procrustes(&data).unwrap();
        let eye = DMatrix::identity(4, 4);
        assert!((c.omega - eye).norm() <= 1e-12);
        assert!(c.diagnostics.full_rank);
    }

    #[test]
    fn recovers_known_rotation() {
        let mut rand = rand_stream(23);
        let r = random_orthogonal(3, &mut rand);
        let f = DMatrix::from_fn(3, 10, |_, _| rand());
        let g = r.transpose() * &f;
        let data = AlignmentData::new(f, g).unwrap();
        let c = solve_procrustes(&data).unwrap();
        assert!((&c.omega - &r).norm() <= 1e-10, "diff {}", (&c.omega - &r).norm());
        assert!(c.diagnostics.residual_after <= 1e-20);
    }

    #[test]
    fn beats_rotation_grid_in_2d() {
        let mut rand = rand_stream(37);
        let f = DMatrix::from_fn(2, 12, |_, _| rand());
        let theta = 0.3_f64;
        let rot = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let mut g = rot.transpose() * &f;
        // noise so the optimum is interior, not exactly the constructed angle
        for x in g.iter_mut() {
            *x += 0.01 * rand();
        }
        let data = AlignmentData::new(f, g).unwrap();
        let c = solve_procrustes(&data).unwrap();
        let best_grid = (0..10_000)
            .map(|i| {
                let phi = 2.0 * std::f64::consts::PI * (i as f64) / 10_000.0;
                let m = DMatrix::from_row_slice(2, 2, &[phi.cos(), -phi.sin(), phi.sin(), phi.cos()]);
                data.residual(&m)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(c.diagnostics.residual_after <= best_grid + 1e-12);
    }

    #[test]
    fn omega_is_orthogonal_on_random_data() {
        let mut rand = rand_stream(51);
        for _ in 0..50 {
            let f = DMatrix::from_fn(5, 7, |_, _| rand());
            let g = DMatrix::from_fn(5, 7, |_, _| rand());
            let c = solve_procrustes(&AlignmentData::new(f, g).unwrap()).unwrap();
            let eye = DMatrix::identity(5, 5);
            assert!((c.omega.transpose() * &c.omega - &eye).norm() <= 1e-12);
            assert!((c.omega.determinant().abs() - 1.0).abs() <= 1e-10);
            assert!(c.diagnostics.residual_after <= c.diagnostics.residual_before + 1e-12);
        }
    }

    #[test]
    fn optimal_against_random_orthogonal_candidates() {
        let mut rand = rand_stream(67);
        for _ in 0..20 {
            let dim = 2 + (rand().abs() * 3.0) as usize; // 2..=4
            let f = DMatrix::from_fn(dim, 6, |_, _| rand());
            let g = DMatrix::from_fn(dim, 6, |_, _| rand());
            let data = AlignmentData::new(f, g).unwrap();
            let c = solve_procrustes(&data).unwrap();
            for _ in 0..200 {
                let q = random_orthogonal(dim, &mut rand);
                assert!(c.diagnostics.residual_after <= data.residual(&q) + 1e-12);
            }
        }
    }

    #[test]
    fn rank_deficient_data_is_flagged_not_fatal() {
        // one repeated column spans rank 1
        let f = DMatrix::from_fn(3, 4, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let g = f.clone();
        let c = solve_procrustes(&AlignmentData::new(f, g).unwrap()).unwrap();
        assert!(!c.diagnostics.full_rank);
        let eye = DMatrix::identity(3, 3);
        assert!((c.omega.transpose() * &c.omega - eye).norm() <= 1e-12);
    }

    #[test]
    fn identity_corrector_round_trips() {
        let sys = FpuSystem::new(3, 300.0).unwrap();
        let u = sys.canonical_initial_state();
        let c = PhaseCorrector::identity(13);
        let sol = apply_corrector(&c, &sys, &u, PinvSettings::default()).unwrap();
        assert!(sol.state.distance(&u) <= 1e-8);
    }

    #[test]
    fn momentum_block_rotation_leaves_q_bitwise() {
        let sys = FpuSystem::new(2, 40.0).unwrap();
        let mut rand = rand_stream(71);
        // block-diagonal Omega acting only on the 4 momentum components
        let mut omega = DMatrix::identity(9, 9);
        let block = random_orthogonal(4, &mut rand);
        omega.view_mut((0, 0), (4, 4)).copy_from(&block);
        let corrector = PhaseCorrector {
            omega,
            diagnostics: CorrectorDiagnostics {
                residual_before: 0.0,
                residual_after: 0.0,
                min_singular_value: 1.0,
                full_rank: true,
            },
        };
        let u = PhaseState::new(vec![0.3, -0.4, 0.9, 0.1], vec![0.5, 0.2, -0.3, 0.8]).unwrap();
        let sol = apply_corrector(&corrector, &sys, &u, PinvSettings::default()).unwrap();
        // q block of the target is untouched, so the warm start is already optimal
        assert_eq!(sol.state.q(), u.q());
        // p = sqrt2 * Omega_p * (p / sqrt2)
        let s = 2.0_f64.sqrt();
        let lam_p = DVector::from_iterator(4, u.p().iter().map(|x| x / s));
        let expect = &block * lam_p * s;
        for i in 0..4 {
            assert!((sol.state.p()[i] - expect[i]).abs() <= 1e-14);
        }
    }

    #[test]
    fn small_rotations_preserve_energy_on_excited_states() {
        // 1e-8 preservation needs genuinely small rotations: image(Lambda) has
        // codimension 1, so rotation size eta leaks ~eta * (stiff-gap scale)
        // of energy through the pseudo-inverse projection
        let sys = FpuSystem::new(3, 300.0).unwrap();
        let mut rand = rand_stream(83);
        for _ in 0..50 {
            // physical-scale states: stiff gaps O(1/omega), soft gaps bounded
            // away from zero so the rotated target stays feasible
            let p: Vec<f64> = (0..6).map(|_| rand()).collect();
            let mut q = vec![0.0; 6];
            let mut cursor = 0.0;
            for i in 0..6 {
                let gap = if i % 2 == 0 {
                    0.4 + 0.3 * rand().abs()
                } else {
                    (0.5 + rand().abs()) / 300.0
                };
                cursor += gap;
                q[i] = cursor;
            }
            let u = PhaseState::from_parts(p, q);
            let omega = small_rotation(13, 1e-6, &mut rand);
            let corrector = PhaseCorrector {
                omega,
                diagnostics: CorrectorDiagnostics {
                    residual_before: 0.0,
                    residual_after: 0.0,
                    min_singular_value: 1.0,
                    full_rank: true,
                },
            };
            let h_before = hamiltonian(&sys, &u).unwrap();
            let sol = apply_corrector_lenient(&corrector, &sys, &u, PinvSettings::default()).unwrap();
            let h_after = hamiltonian(&sys, &sol.state).unwrap();
            let rel = (h_after - h_before).abs() / h_before.abs();
            assert!(rel <= 1e-8, "relative energy change {rel:e}");
        }
    }

    #[test]
    fn energy_change_bounded_by_pinv_residual() {
        let sys = FpuSystem::new(3, 300.0).unwrap();
        let t = sys.energy_transform().unwrap();
        let mut rand = rand_stream(97);
        for _ in 0..100 {
            let u = PhaseState::from_parts(
                (0..6).map(|_| rand()).collect(),
                (0..6).map(|_| rand()).collect(),
            );
            let omega = small_rotation(13, 1e-2, &mut rand);
            let corrector = PhaseCorrector {
                omega,
                diagnostics: CorrectorDiagnostics {
                    residual_before: 0.0,
                    residual_after: 0.0,
                    min_singular_value: 1.0,
                    full_rank: true,
                },
            };
            let h_before = hamiltonian(&sys, &u).unwrap();
            let lam_norm = t.apply(&u).norm_squared().sqrt();
            let sol = apply_corrector_lenient(&corrector, &sys, &u, PinvSettings::default()).unwrap();
            let h_after = hamiltonian(&sys, &sol.state).unwrap();
            assert!(
                (h_after - h_before).abs()
                    <= 10.0 * sol.residual * lam_norm + 1e-12 * h_before.abs(),
                "dH {:e} residual {:e} norm {lam_norm:e}",
                (h_after - h_before).abs(),
                sol.residual
            );
        }
    }
}
