//! Subcommand implementations: sequential simulation, parareal runs,
//! sampling, training, network evaluation, and the solver benchmark table.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use pint_core::error::{Error, Result};
use pint_core::integrators::{simulate_sequence, IntegratorSpec, Precision};
use pint_core::nn::{load_checkpoint, rollout, save_checkpoint, train, Arch, TrainConfig};
use pint_core::parareal::{parareal_run, PararealConfig};
use pint_core::pinv::PinvSettings;
use pint_core::report::{log10_or_sentinel, write_csv, write_states_csv, RunManifest};
use pint_core::sampling::{
    build_training_set, hmc_h0, min_distance_diagnostic, read_dataset, traj_ensemble_h0,
    write_dataset, SampleSet, SamplerConfig,
};
use pint_core::solver::apply_sequence;
use pint_core::state::PhaseState;
use pint_core::system::{
    energy_error, hamiltonian, stiff_spring_energies, trajectory_error, HamiltonianSystem,
};

use crate::config::{
    load_config, LoadedConfig, SamplerAlgo, SolverConfig, SystemHandle,
};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub algo: Option<SamplerAlgo>,
}

struct Run {
    loaded: LoadedConfig,
    system: SystemHandle,
    out_dir: PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
    manifest: RunManifest,
}

fn begin(command: &str, config_path: &Path, overrides: &Overrides) -> Result<Run> {
    let loaded = load_config(config_path)?;
    let system = SystemHandle::build(&loaded.config.system)?;
    let out_dir = overrides
        .out
        .clone()
        .or_else(|| loaded.config.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let seed = overrides.seed.or(loaded.config.seed);
    let workers = overrides.workers.or(loaded.config.workers);
    let manifest = RunManifest::new(command, loaded.raw.clone(), seed);
    Ok(Run { loaded, system, out_dir, seed, workers, manifest })
}

impl Run {
    fn finish(mut self, emitted: &[PathBuf]) -> Result<()> {
        for path in emitted {
            self.manifest.record_file(&self.out_dir, path)?;
        }
        let manifest_path = self.manifest.write(&self.out_dir)?;
        println!("wrote {}", manifest_path.display());
        Ok(())
    }
}

/// Sequential run with per-step metrics, mirroring the long-horizon
/// fine-solver error study.
pub fn cmd_simulate(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let mut run = begin("sim", config_path, overrides)?;
    let section = run
        .loaded
        .config
        .simulate
        .clone()
        .ok_or_else(|| Error::Config("config has no [simulate] section".into()))?;
    let system = run.system.as_dyn();
    let u0 = run.system.resolve_state(&section.initial)?;

    let t0 = Instant::now();
    let trajectory = sequential_trajectory(&section.solver, &system, &u0, section.dt, section.steps, &run.loaded.base_dir)?;
    run.manifest.record_timing("solve", t0.elapsed().as_secs_f64());

    let reference = match &section.reference {
        Some(r) => Some(sequential_trajectory(r, &system, &u0, section.dt, section.steps, &run.loaded.base_dir)?),
        None => None,
    };

    let mut emitted = Vec::new();
    let traj_path = run.out_dir.join("trajectory.csv");
    write_states_csv(
        &traj_path,
        &[format!("sequential run, dt={}, steps={}", section.dt, section.steps)],
        &trajectory,
    )?;
    emitted.push(traj_path);

    let h0 = hamiltonian(system.as_ref(), &u0)?;
    let mut columns = vec!["step".to_string(), "time".to_string(), "energy_drift_rel".to_string()];
    if reference.is_some() {
        columns.push("traj_err_vs_ref".into());
        columns.push("energy_err_vs_ref".into());
    }
    let energy_path = run.out_dir.join("energy_errors.csv");
    write_csv(
        &energy_path,
        &["relative energy drift vs the initial energy; reference errors when available".into()],
        &columns,
        trajectory.iter().enumerate().map(|(i, u)| {
            let mut row = vec![
                i as f64,
                i as f64 * section.dt,
                (hamiltonian(system.as_ref(), u).unwrap() - h0).abs() / h0.abs(),
            ];
            if let Some(r) = &reference {
                row.push(trajectory_error(u, &r[i]).unwrap());
                row.push(energy_error(system.as_ref(), u, &r[i]).unwrap());
            }
            row
        }),
    )?;
    emitted.push(energy_path);

    if let Some(fpu) = run.system.fpu() {
        let stiff_path = run.out_dir.join("stiff_energies.csv");
        let m = fpu.pair_count();
        let mut cols: Vec<String> = vec!["step".into(), "time".into()];
        cols.extend((1..=m).map(|j| format!("i{j}")));
        cols.push("total".into());
        let fpu = fpu.clone();
        let dt = section.dt;
        write_csv(
            &stiff_path,
            &["per-spring stiff energies and their total".into()],
            &cols,
            trajectory.iter().enumerate().map(move |(i, u)| {
                let mut row = vec![i as f64, i as f64 * dt];
                row.extend(stiff_spring_energies(&fpu, u).unwrap());
                row
            }),
        )?;
        emitted.push(stiff_path);
    }
    run.finish(&emitted)
}

/// Integrators keep their working precision across the whole run; network
/// solvers are applied step by step.
fn sequential_trajectory(
    solver: &SolverConfig,
    system: &Arc<dyn HamiltonianSystem>,
    u0: &PhaseState,
    dt: f64,
    steps: usize,
    base: &Path,
) -> Result<Vec<PhaseState>> {
    match solver.integrator_spec()? {
        Some(spec) => simulate_sequence(system.as_ref(), u0, &spec, dt, steps),
        None => {
            let map = solver.build(system, dt, base)?;
            apply_sequence(map.as_ref(), u0, steps)
        }
    }
}

/// Default reference: the fine integrator one dyadic level finer, in
/// double-double, run sequentially with held precision.
fn default_reference_spec(fine: &SolverConfig) -> Result<Option<IntegratorSpec>> {
    Ok(fine.integrator_spec()?.map(|spec| IntegratorSpec {
        scheme: spec.scheme,
        h: spec.h / 2.0,
        precision: Precision::DoubleDouble,
    }))
}

pub fn cmd_parareal(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let mut run = begin("parareal", config_path, overrides)?;
    let section = run
        .loaded
        .config
        .parareal
        .clone()
        .ok_or_else(|| Error::Config("config has no [parareal] section".into()))?;
    let system = run.system.as_dyn();
    let u0 = run.system.canonical_state();

    let coarse = section.coarse.build(&system, section.dt, &run.loaded.base_dir)?;
    let fine = section.fine.build(&system, section.dt, &run.loaded.base_dir)?;

    let t0 = Instant::now();
    let reference = match &section.reference {
        Some(r) => sequential_trajectory(r, &system, &u0, section.dt, section.n, &run.loaded.base_dir)?,
        None => match default_reference_spec(&section.fine)? {
            Some(spec) => simulate_sequence(system.as_ref(), &u0, &spec, section.dt, section.n)?,
            None => apply_sequence(fine.as_ref(), &u0, section.n)?,
        },
    };
    run.manifest.record_timing("reference", t0.elapsed().as_secs_f64());

    let mut cfg = PararealConfig::new(section.n, section.k, section.dt, section.mode);
    cfg.n_trust = section.n_trust;
    cfg.workers = run.workers;
    if let Some(tol) = section.pinv_tol {
        cfg.pinv = PinvSettings { tol, ..cfg.pinv };
    }
    if let Some(mi) = section.pinv_max_iter {
        cfg.pinv = PinvSettings { max_iter: mi, ..cfg.pinv };
    }

    let t0 = Instant::now();
    let tableau = parareal_run(system.as_ref(), &u0, coarse.as_ref(), fine.as_ref(), &cfg, Some(&reference))?;
    run.manifest.record_timing("parareal", t0.elapsed().as_secs_f64());

    let mut emitted = Vec::new();
    let n_trust = cfg.n_trust.unwrap_or(section.n / 2);

    // log10 error grids: rows = iterations, cols = time indices
    let traj_path = run.out_dir.join("tableau_traj_err.csv");
    write_csv(
        &traj_path,
        &[
            "log10 trajectory error vs reference; rows are iterations".into(),
            format!("columns n = 0..{n_trust} (trust horizon); exact zeros written as -16"),
        ],
        &(0..=n_trust).map(|n| format!("n{n}")).collect::<Vec<_>>(),
        tableau.metrics.iter().map(|row| {
            row.iter()
                .take(n_trust + 1)
                .map(|c| log10_or_sentinel(c.trajectory_error.unwrap_or(f64::NAN)))
                .collect()
        }),
    )?;
    emitted.push(traj_path);

    let energy_path = run.out_dir.join("tableau_energy_err.csv");
    write_csv(
        &energy_path,
        &[
            "log10 relative energy error vs reference; rows are iterations".into(),
            "exact zeros written as -16".into(),
        ],
        &(0..=section.n).map(|n| format!("n{n}")).collect::<Vec<_>>(),
        tableau.metrics.iter().map(|row| {
            row.iter()
                .map(|c| log10_or_sentinel(c.energy_error.unwrap_or(f64::NAN)))
                .collect()
        }),
    )?;
    emitted.push(energy_path);

    if let Some(fpu) = run.system.fpu() {
        let m = fpu.pair_count();
        let mut cols: Vec<String> = vec!["n".into()];
        cols.extend((1..=m).map(|j| format!("i{j}")));
        cols.push("total".into());
        for (k, row) in tableau.states.iter().enumerate() {
            let path = run.out_dir.join(format!("stiff_energies_k{k}.csv"));
            let fpu = fpu.clone();
            write_csv(
                &path,
                &[format!("stiff spring energy profile of iteration {k}")],
                &cols,
                row.iter().enumerate().map(move |(n, u)| {
                    let mut r = vec![n as f64];
                    r.extend(stiff_spring_energies(&fpu, u).unwrap());
                    r
                }),
            )?;
            emitted.push(path);
        }
    }

    if section.dump_correctors {
        for (k, corrector) in tableau.correctors.iter().enumerate() {
            let path = run.out_dir.join(format!("correctors/omega_k{k}.csv"));
            let dim = corrector.omega.nrows();
            write_csv(
                &path,
                &[
                    format!(
                        "orthogonal corrector of iteration {k}, row-major; residual {:.3e} -> {:.3e}",
                        corrector.diagnostics.residual_before, corrector.diagnostics.residual_after
                    ),
                ],
                &(0..dim).map(|j| format!("c{j}")).collect::<Vec<_>>(),
                (0..dim).map(|r| (0..dim).map(|c| corrector.omega[(r, c)]).collect()),
            )?;
            emitted.push(path);
        }
    }

    println!(
        "parareal finished: K={} rows, worst pinv residual {:.3e}",
        section.k, tableau.pinv_worst_residual
    );
    run.finish(&emitted)
}

pub fn cmd_sample(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let mut run = begin("sample", config_path, overrides)?;
    let section = run
        .loaded
        .config
        .sampler
        .clone()
        .ok_or_else(|| Error::Config("config has no [sampler] section".into()))?;
    let system = run.system.as_dyn();
    let algo = overrides.algo.unwrap_or(section.algo);

    let sampler = SamplerConfig {
        target_energy: run.system.resolve_energy(&section.h0)?,
        q0: run.system.resolve_q0(&section.q0)?,
        sigma: section.sigma,
        chains: section.chains,
        transitions: section.transitions,
        level_sets: section.level_sets,
        trajectories: section.trajectories,
        traj_len: section.traj_len,
        seed: run.seed.unwrap_or(0),
        max_rejects: section.max_rejects,
    };
    let flow = section.flow.build(&system, section.delta_t, &run.loaded.base_dir)?;

    let t0 = Instant::now();
    let set: SampleSet = match algo {
        SamplerAlgo::Hmc => hmc_h0(system.as_ref(), flow.as_ref(), &sampler)?,
        SamplerAlgo::Trajensemble => traj_ensemble_h0(system.as_ref(), flow.as_ref(), &sampler)?,
    };
    run.manifest.record_timing("sampling", t0.elapsed().as_secs_f64());

    let fine = section.fine.build(&system, section.fine_dt, &run.loaded.base_dir)?;
    let t0 = Instant::now();
    let dataset = build_training_set(&set, fine.as_ref(), section.sequence_len)?;
    run.manifest.record_timing("targets", t0.elapsed().as_secs_f64());
    if dataset.dropped > 0 {
        eprintln!("warning: dropped {} non-finite samples", dataset.dropped);
    }

    let algo_name = match algo {
        SamplerAlgo::Hmc => "hmc",
        SamplerAlgo::Trajensemble => "trajensemble",
    };
    let dataset_path = run.out_dir.join(&section.dataset_out);
    write_dataset(&dataset, &sampler, algo_name, &dataset_path)?;
    println!("sampled {} states -> {} rows", set.len(), dataset.samples.len());
    run.finish(&[dataset_path])
}

pub fn cmd_train(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let mut run = begin("train", config_path, overrides)?;
    let section = run
        .loaded
        .config
        .train
        .clone()
        .ok_or_else(|| Error::Config("config has no [train] section".into()))?;
    let system = run.system.as_dyn();

    let dataset_path = if section.dataset.is_absolute() {
        section.dataset.clone()
    } else {
        run.loaded.base_dir.join(&section.dataset)
    };
    let (dataset, _, _) = read_dataset(&dataset_path)?;

    let train_config = TrainConfig {
        sequence_len: section.sequence_len,
        metric: section.metric,
        epochs: section.epochs,
        batch_size: section.batch_size,
        lr: section.lr,
        weight_decay: section.weight_decay,
        seed: run.seed.unwrap_or(0),
    };
    let arch = Arch {
        hidden_layers: section.hidden_layers,
        width: section.width,
        state_dim: 2 * dataset.state_dim,
    };

    let t0 = Instant::now();
    let (params, history) =
        train(&dataset, arch, &train_config, system.energy_transform())?;
    run.manifest.record_timing("training", t0.elapsed().as_secs_f64());

    let ckpt_path = run.out_dir.join(&section.checkpoint_out);
    save_checkpoint(&params, Some(&train_config), &ckpt_path)?;

    let history_path = run.out_dir.join("history.csv");
    write_csv(
        &history_path,
        &["mean training loss per epoch".into()],
        &["epoch".into(), "loss".into()],
        history
            .epoch_loss
            .iter()
            .enumerate()
            .map(|(e, l)| vec![e as f64, *l]),
    )?;
    println!(
        "trained {} epochs: loss {:.3e} -> {:.3e}",
        history.epoch_loss.len(),
        history.epoch_loss.first().unwrap_or(&f64::NAN),
        history.epoch_loss.last().unwrap_or(&f64::NAN)
    );
    run.finish(&[ckpt_path, history_path])
}

pub fn cmd_eval_nn(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let mut run = begin("eval-nn", config_path, overrides)?;
    let section = run
        .loaded
        .config
        .eval
        .clone()
        .ok_or_else(|| Error::Config("config has no [eval] section".into()))?;
    let system = run.system.as_dyn();
    let u0 = run.system.resolve_state(&section.initial)?;

    let ckpt_path = if section.checkpoint.is_absolute() {
        section.checkpoint.clone()
    } else {
        run.loaded.base_dir.join(&section.checkpoint)
    };
    let (params, _) = load_checkpoint(&ckpt_path)?;

    let t0 = Instant::now();
    let roll = rollout(&params, &u0, section.steps)?;
    run.manifest.record_timing("rollout", t0.elapsed().as_secs_f64());
    if let Some(step) = roll.truncated_at {
        eprintln!("warning: rollout left the finite range at step {step}");
    }

    let reference = match &section.reference {
        Some(r) => Some(sequential_trajectory(
            r,
            &system,
            &u0,
            section.dt,
            roll.states.len() - 1,
            &run.loaded.base_dir,
        )?),
        None => None,
    };

    let mut emitted = Vec::new();
    let traj_path = run.out_dir.join("nn_trajectory.csv");
    write_states_csv(&traj_path, &["network rollout".into()], &roll.states)?;
    emitted.push(traj_path);

    let h0 = hamiltonian(system.as_ref(), &u0)?;
    let mut columns = vec!["step".into(), "energy_drift_rel".to_string()];
    if reference.is_some() {
        columns.push("traj_err_vs_ref".into());
        columns.push("energy_err_vs_ref".into());
    }
    let err_path = run.out_dir.join("nn_errors.csv");
    write_csv(
        &err_path,
        &["rollout errors; energy drift is relative to the initial energy".into()],
        &columns,
        roll.states.iter().enumerate().map(|(i, u)| {
            let mut row = vec![
                i as f64,
                (hamiltonian(system.as_ref(), u).unwrap() - h0).abs() / h0.abs(),
            ];
            if let Some(r) = &reference {
                row.push(trajectory_error(u, &r[i]).unwrap());
                row.push(energy_error(system.as_ref(), u, &r[i]).unwrap());
            }
            row
        }),
    )?;
    emitted.push(err_path);
    run.finish(&emitted)
}

pub fn cmd_bench(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let mut run = begin("bench", config_path, overrides)?;
    let section = run
        .loaded
        .config
        .bench
        .clone()
        .ok_or_else(|| Error::Config("config has no [bench] section".into()))?;
    let system = run.system.as_dyn();
    let u0 = run.system.canonical_state();

    let reference_map = section.reference.build(&system, section.dt, &run.loaded.base_dir)?;
    let t0 = Instant::now();
    let u_ref = reference_map.apply(&u0)?;
    run.manifest.record_timing("reference", t0.elapsed().as_secs_f64());

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for solver in &section.solvers {
        let map = solver.build(&system, section.dt, &run.loaded.base_dir)?;
        let out = map.apply(&u0)?;
        let traj = trajectory_error(&out, &u_ref)?;
        let energy = energy_error(system.as_ref(), &out, &u_ref)?;
        let mut times: Vec<f64> = (0..section.calls.max(1))
            .map(|_| {
                let t = Instant::now();
                let _ = map.apply(&u0);
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_ms = times[times.len() / 2];
        println!(
            "{:<28} traj err {traj:.4e}  energy err {energy:.4e}  median {median_ms:.4} ms",
            map.label()
        );
        labels.push(map.label());
        rows.push(vec![traj, energy, median_ms]);
    }

    let bench_path = run.out_dir.join("bench.csv");
    let comments: Vec<String> = std::iter::once(format!(
        "one-step accuracy vs {} and median wall-clock over {} calls",
        reference_map.label(),
        section.calls
    ))
    .chain(labels.iter().enumerate().map(|(i, l)| format!("row {i}: {l}")))
    .collect();
    write_csv(
        &bench_path,
        &comments,
        &["traj_err".into(), "energy_err".into(), "median_ms".into()],
        rows.into_iter(),
    )?;
    run.finish(&[bench_path])
}

/// Emit the coverage diagnostic for an existing dataset against a reference
/// trajectory (used by sample configs that request it).
#[allow(dead_code)]
pub fn min_distance_csv(
    system: &Arc<dyn HamiltonianSystem>,
    reference: &[PhaseState],
    set: &SampleSet,
    path: &Path,
) -> Result<()> {
    let _ = system;
    let d = min_distance_diagnostic(reference, set)?;
    write_csv(
        path,
        &["minimum phase-space distance from each reference point to the sample set".into()],
        &["step".into(), "min_distance".into()],
        d.iter().enumerate().map(|(i, x)| vec![i as f64, *x]),
    )
}
