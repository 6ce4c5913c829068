//! The parareal engine: plain iteration, the Procrustes-corrected variant
//! with its online phase corrector, parallel fine sweeps, and full tableau
//! capture for diagnostics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pinv::PinvSettings;
use crate::procrustes::{solve_procrustes, AlignmentData, PhaseCorrector};
use crate::solver::SolutionMap;
use crate::state::PhaseState;
use crate::system::{energy_error, trajectory_error, EnergyTransform, HamiltonianSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PararealMode {
    Plain,
    Procrustes,
}

#[derive(Debug, Clone)]
pub struct PararealConfig {
    /// Number of time intervals N.
    pub n_intervals: usize,
    /// Number of corrected rows K; the tableau has rows 0..=K.
    pub iterations: usize,
    /// Interval length.
    pub dt: f64,
    pub mode: PararealMode,
    /// Horizon for trajectory-error metrics (energy errors cover all n).
    /// Defaults to N/2 when a reference is supplied.
    pub n_trust: Option<usize>,
    pub pinv: PinvSettings,
    /// Abort when the position solve stalls above the pinv tolerance instead
    /// of accepting the stationary iterate.
    pub pinv_strict: bool,
    /// Worker threads for the per-iteration sweeps; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl PararealConfig {
    pub fn new(n_intervals: usize, iterations: usize, dt: f64, mode: PararealMode) -> PararealConfig {
        PararealConfig {
            n_intervals,
            iterations,
            dt,
            mode,
            n_trust: None,
            pinv: PinvSettings::default(),
            pinv_strict: false,
            workers: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_intervals == 0 || !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "parareal needs N >= 1 and dt > 0, got N={}, dt={}",
                self.n_intervals, self.dt
            )));
        }
        Ok(())
    }
}

/// Per-cell errors against a supplied reference trajectory.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellMetrics {
    pub trajectory_error: Option<f64>,
    pub energy_error: Option<f64>,
}

/// The (K+1) x (N+1) grid of iterates u_n^(k) plus diagnostics.
#[derive(Debug)]
pub struct PararealTableau {
    pub states: Vec<Vec<PhaseState>>,
    /// One corrector per iteration in procrustes mode, empty otherwise.
    pub correctors: Vec<PhaseCorrector>,
    /// Empty when no reference was supplied.
    pub metrics: Vec<Vec<CellMetrics>>,
    /// Largest pseudo-inverse residual accepted during the run.
    pub pinv_worst_residual: f64,
}

impl PararealTableau {
    pub fn row(&self, k: usize) -> &[PhaseState] {
        &self.states[k]
    }
}

/// Element-wise application of the fine map, in parallel. The result is
/// bitwise independent of the worker count.
pub fn fine_sweep(
    states: &[PhaseState],
    fine: &dyn SolutionMap,
    workers: Option<usize>,
) -> Result<Vec<PhaseState>> {
    sweep(states, fine, workers)
}

fn sweep(
    states: &[PhaseState],
    map: &dyn SolutionMap,
    workers: Option<usize>,
) -> Result<Vec<PhaseState>> {
    let run = || {
        states
            .par_iter()
            .enumerate()
            .map(|(index, u)| {
                map.apply(u).map_err(|source| Error::SweepFailure {
                    index,
                    source: Box::new(source),
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// u_{n+1} = c + (f - g), the parareal update in concatenated coordinates.
fn combine(c: &PhaseState, f: &PhaseState, g: &PhaseState) -> PhaseState {
    let p = c
        .p()
        .iter()
        .zip(f.p().iter().zip(g.p()))
        .map(|(c, (f, g))| c + (f - g))
        .collect();
    let q = c
        .q()
        .iter()
        .zip(f.q().iter().zip(g.q()))
        .map(|(c, (f, g))| c + (f - g))
        .collect();
    PhaseState::from_parts(p, q)
}

/// Run the parareal iteration. Row 0 is the sequential coarse trajectory;
/// row k+1 applies the update
///   plain:      u_{n+1} = C u_n^(k+1) + (F u_n^(k) - C u_n^(k))
///   procrustes: u_{n+1} = Psi C u_n^(k+1) + (F u_n^(k) - Psi C u_n^(k))
/// with Psi = Lambda^+ Omega^(k) Lambda solved fresh from iteration k's
/// fine/coarse pairs.
pub fn parareal_run(
    system: &dyn HamiltonianSystem,
    u0: &PhaseState,
    coarse: &dyn SolutionMap,
    fine: &dyn SolutionMap,
    config: &PararealConfig,
    reference: Option<&[PhaseState]>,
) -> Result<PararealTableau> {
    config.validate()?;
    let n = config.n_intervals;
    if let Some(r) = reference {
        if r.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                got: r.len(),
                context: "reference trajectory length",
            });
        }
    }
    let transform = match config.mode {
        PararealMode::Procrustes => Some(
            system
                .energy_transform()
                .ok_or(Error::UnsupportedTransform)?,
        ),
        PararealMode::Plain => None,
    };

    // row 0: sequential coarse trajectory
    let mut row0 = Vec::with_capacity(n + 1);
    row0.push(u0.clone());
    for i in 0..n {
        let next = coarse.apply(&row0[i])?;
        if !next.is_finite() {
            return Err(Error::NonFiniteState { iteration: 0, index: i + 1 });
        }
        row0.push(next);
    }
    let mut states = vec![row0];
    let mut correctors = Vec::new();
    let mut pinv_worst = 0.0f64;

    for k in 0..config.iterations {
        let prev = &states[k];
        let f_prev = sweep(&prev[..n], fine, config.workers)?;
        let g_prev = sweep(&prev[..n], coarse, config.workers)?;

        // the trailing term of the update: g_n in plain mode, Psi(g_n) with
        // warm start g_n in procrustes mode
        let trailing: Vec<PhaseState> = match transform {
            None => g_prev.clone(),
            Some(t) => {
                let corrector = solve_corrector(t, &f_prev, &g_prev)?;
                let psi_g = apply_many(&corrector, system, &g_prev, config)?;
                pinv_worst = pinv_worst.max(psi_g.1);
                correctors.push(corrector);
                psi_g.0
            }
        };

        let mut row = Vec::with_capacity(n + 1);
        row.push(u0.clone());
        for i in 0..n {
            let c = coarse.apply(&row[i])?;
            let c = match (&transform, correctors.last()) {
                (Some(_), Some(corrector)) => {
                    let sol = apply_psi(corrector, system, &c, config)?;
                    pinv_worst = pinv_worst.max(sol.1);
                    sol.0
                }
                _ => c,
            };
            let next = combine(&c, &f_prev[i], &trailing[i]);
            if !next.is_finite() {
                return Err(Error::NonFiniteState {
                    iteration: k + 1,
                    index: i + 1,
                });
            }
            row.push(next);
        }
        states.push(row);
    }

    let metrics = match reference {
        Some(r) => collect_metrics(system, &states, r, config),
        None => Vec::new(),
    };

    Ok(PararealTableau {
        states,
        correctors,
        metrics,
        pinv_worst_residual: pinv_worst,
    })
}

fn solve_corrector(
    transform: &dyn EnergyTransform,
    fine_out: &[PhaseState],
    coarse_out: &[PhaseState],
) -> Result<PhaseCorrector> {
    let data = AlignmentData::from_states(transform, fine_out, coarse_out)?;
    solve_procrustes(&data)
}

fn apply_psi(
    corrector: &PhaseCorrector,
    system: &dyn HamiltonianSystem,
    u: &PhaseState,
    config: &PararealConfig,
) -> Result<(PhaseState, f64)> {
    let sol = if config.pinv_strict {
        crate::procrustes::apply_corrector(corrector, system, u, config.pinv)?
    } else {
        crate::procrustes::apply_corrector_lenient(corrector, system, u, config.pinv)?
    };
    Ok((sol.state, sol.residual))
}

/// Psi over a batch; independent per element, runs on the sweep pool.
fn apply_many(
    corrector: &PhaseCorrector,
    system: &dyn HamiltonianSystem,
    states: &[PhaseState],
    config: &PararealConfig,
) -> Result<(Vec<PhaseState>, f64)> {
    let run = || {
        states
            .par_iter()
            .map(|u| apply_psi(corrector, system, u, config))
            .collect::<Result<Vec<_>>>()
    };
    let solved = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run),
        None => run(),
    }?;
    let worst = solved.iter().fold(0.0f64, |m, (_, r)| m.max(*r));
    Ok((solved.into_iter().map(|(s, _)| s).collect(), worst))
}

fn collect_metrics(
    system: &dyn HamiltonianSystem,
    states: &[Vec<PhaseState>],
    reference: &[PhaseState],
    config: &PararealConfig,
) -> Vec<Vec<CellMetrics>> {
    let n_trust = config.n_trust.unwrap_or(config.n_intervals / 2);
    states
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(n, u)| CellMetrics {
                    trajectory_error: (n <= n_trust)
                        .then(|| trajectory_error(u, &reference[n]).ok())
                        .flatten(),
                    energy_error: energy_error(system, u, &reference[n]).ok(),
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{IntegratorSpec, Precision, Scheme};
    use crate::solver::{apply_sequence, IntegratorMap};
    use crate::system::FpuSystem;
    use std::sync::Arc;

    fn setup(
        omega: f64,
        coarse_k: i32,
        fine_k: i32,
    ) -> (Arc<FpuSystem>, IntegratorMap, IntegratorMap, PhaseState) {
        let sys = Arc::new(FpuSystem::new(3, omega).unwrap());
        let coarse = IntegratorMap::new(
            sys.clone(),
            IntegratorSpec::new(Scheme::Css4, 2f64.powi(coarse_k), Precision::Double).unwrap(),
            1.0,
        )
        .unwrap();
        let fine = IntegratorMap::new(
            sys.clone(),
            IntegratorSpec::new(Scheme::Kl8, 2f64.powi(fine_k), Precision::Double).unwrap(),
            1.0,
        )
        .unwrap();
        let u0 = sys.canonical_initial_state();
        (sys, coarse, fine, u0)
    }

    #[test]
    fn zero_iterations_is_the_coarse_trajectory() {
        let (sys, coarse, fine, u0) = setup(50.0, -6, -8);
        let cfg = PararealConfig::new(6, 0, 1.0, PararealMode::Plain);
        let tab = parareal_run(sys.as_ref(), &u0, &coarse, &fine, &cfg, None).unwrap();
        assert_eq!(tab.states.len(), 1);
        let seq = apply_sequence(&coarse, &u0, 6).unwrap();
        for (a, b) in tab.row(0).iter().zip(&seq) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn coarse_equals_fine_telescopes_in_one_iteration() {
        let (sys, _, fine, u0) = setup(50.0, -6, -8);
        let cfg = PararealConfig::new(8, 1, 1.0, PararealMode::Plain);
        let tab = parareal_run(sys.as_ref(), &u0, &fine, &fine, &cfg, None).unwrap();
        let seq = apply_sequence(&fine, &u0, 8).unwrap();
        for (n, (a, b)) in tab.row(1).iter().zip(&seq).enumerate() {
            assert!(a.distance(b) <= 1e-12, "n={n}: {}", a.distance(b));
        }
    }

    #[test]
    fn exactness_for_early_time_indices() {
        let (sys, coarse, fine, u0) = setup(50.0, -6, -9);
        let cfg = PararealConfig::new(8, 5, 1.0, PararealMode::Plain);
        let tab = parareal_run(sys.as_ref(), &u0, &coarse, &fine, &cfg, None).unwrap();
        let seq = apply_sequence(&fine, &u0, 8).unwrap();
        for k in 0..=5usize {
            for n in 0..=k.min(8) {
                let d = tab.states[k][n].distance(&seq[n]);
                assert!(d <= 1e-9, "k={k} n={n}: {d:e}");
            }
        }
    }

    #[test]
    fn fine_row_is_a_fixed_point() {
        // seed the "previous" row as the exact fine trajectory by using C = F,
        // then check one more plain iteration stays on it
        let (sys, coarse, fine, u0) = setup(50.0, -6, -8);
        let cfg = PararealConfig::new(6, 3, 1.0, PararealMode::Plain);
        let tab = parareal_run(sys.as_ref(), &u0, &coarse, &fine, &cfg, None).unwrap();
        let seq = apply_sequence(&fine, &u0, 6).unwrap();
        // rows 2 and 3 agree with the fine solution wherever row 2 already does
        for n in 0..=3usize {
            let d2 = tab.states[2][n].distance(&seq[n]);
            let d3 = tab.states[3][n].distance(&seq[n]);
            if d2 <= 1e-12 {
                assert!(d3 <= 1e-10, "n={n}: d3={d3:e}");
            }
        }
    }

    #[test]
    fn procrustes_mode_produces_correctors_and_runs() {
        let (sys, coarse, fine, u0) = setup(50.0, -6, -9);
        let mut cfg = PararealConfig::new(8, 3, 1.0, PararealMode::Procrustes);
        cfg.n_trust = Some(8);
        let reference = apply_sequence(&fine, &u0, 8).unwrap();
        let tab = parareal_run(sys.as_ref(), &u0, &coarse, &fine, &cfg, Some(&reference)).unwrap();
        assert_eq!(tab.correctors.len(), 3);
        for c in &tab.correctors {
            assert!(c.diagnostics.residual_after <= c.diagnostics.residual_before + 1e-15);
        }
        assert_eq!(tab.metrics.len(), 4);
        // iterates improve on the coarse row at the end of the window
        let e0 = tab.metrics[0][8].trajectory_error.unwrap();
        let e3 = tab.metrics[3][8].trajectory_error.unwrap();
        assert!(e3 < e0, "no improvement: {e0:e} -> {e3:e}");
    }

    #[test]
    fn procrustes_exactness_still_holds() {
        let (sys, coarse, fine, u0) = setup(50.0, -6, -9);
        let cfg = PararealConfig::new(6, 4, 1.0, PararealMode::Procrustes);
        let tab = parareal_run(sys.as_ref(), &u0, &coarse, &fine, &cfg, None).unwrap();
        let seq = apply_sequence(&fine, &u0, 6).unwrap();
        for k in 0..=4usize {
            for n in 0..=k.min(6) {
                let d = tab.states[k][n].distance(&seq[n]);
                // exactness up to the pseudo-inverse tolerance
                assert!(d <= 1e-7, "k={k} n={n}: {d:e}");
            }
        }
    }

    #[test]
    fn sweep_is_worker_count_invariant() {
        let (_, _, fine, u0) = setup(50.0, -6, -8);
        let states = apply_sequence(&fine, &u0, 5).unwrap();
        let one = fine_sweep(&states, &fine, Some(1)).unwrap();
        let four = fine_sweep(&states, &fine, Some(4)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn sweep_of_empty_list_is_empty() {
        let (_, _, fine, _) = setup(50.0, -6, -8);
        assert!(fine_sweep(&[], &fine, Some(2)).unwrap().is_empty());
    }

    #[test]
    fn sweep_throughput_scales_with_workers() {
        // soft, machine-dependent: the canonical check is 8 workers >= 4x one
        // worker on 64 expensive solves; scale the floor to the cores we have
        let sys = Arc::new(FpuSystem::new(3, 50.0).unwrap());
        let fine = IntegratorMap::new(
            sys.clone(),
            IntegratorSpec::new(Scheme::Vv, 2f64.powi(-17), Precision::Double).unwrap(),
            1.0,
        )
        .unwrap();
        let states: Vec<PhaseState> = (0..64).map(|_| sys.canonical_initial_state()).collect();
        let cores = std::thread::available_parallelism().map(|c| c.get()).unwrap_or(1);
        if cores < 2 {
            return;
        }
        let workers = cores.min(8);
        let time = |w: usize| {
            let t0 = std::time::Instant::now();
            fine_sweep(&states, &fine, Some(w)).unwrap();
            t0.elapsed().as_secs_f64()
        };
        let serial = time(1);
        let parallel = time(workers);
        let speedup = serial / parallel;
        let floor = if workers >= 8 { 4.0 } else { 0.55 * workers as f64 };
        assert!(
            speedup >= floor,
            "{workers} workers gave {speedup:.2}x over 1 worker (floor {floor:.2}x)"
        );
    }

    #[test]
    fn unstable_coarse_aborts_with_cell_coordinates() {
        // omega * h far beyond the stability limit blows up to non-finite
        let sys = Arc::new(FpuSystem::new(3, 300.0).unwrap());
        let coarse = IntegratorMap::new(
            sys.clone(),
            IntegratorSpec::new(Scheme::Vv, 2f64.powi(-3), Precision::Double).unwrap(),
            1.0,
        )
        .unwrap();
        let fine = IntegratorMap::new(
            sys.clone(),
            IntegratorSpec::new(Scheme::Kl8, 2f64.powi(-10), Precision::Double).unwrap(),
            1.0,
        )
        .unwrap();
        let u0 = sys.canonical_initial_state();
        let cfg = PararealConfig::new(10, 2, 1.0, PararealMode::Plain);
        let err = parareal_run(sys.as_ref(), &u0, &coarse, &fine, &cfg, None).unwrap_err();
        match err {
            Error::NonFiniteState { .. } | Error::SweepFailure { .. } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }
}
