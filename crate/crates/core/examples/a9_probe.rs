use pint_core::integrators::{IntegratorSpec, Precision, Scheme};
use pint_core::nn::{dataset_loss, rollout, train, Arch, LossMetric, OneCycleSchedule, TrainConfig};
use pint_core::sampling::{build_training_set, hmc_h0, traj_ensemble_h0, SamplerConfig};
use pint_core::solver::IntegratorMap;
use pint_core::system::{hamiltonian, FpuSystem, HamiltonianSystem};
use std::sync::Arc;

fn energy_err_100(sys: &FpuSystem, params: &pint_core::nn::ResNetParams) -> f64 {
    let u0 = sys.canonical_initial_state();
    let roll = rollout(params, &u0, 100).unwrap();
    let h0 = hamiltonian(sys, &u0).unwrap();
    let mut worst = 0.0f64;
    for u in &roll.states[1..] {
        if !u.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max((hamiltonian(sys, u).unwrap() - h0).abs() / h0);
    }
    if roll.truncated_at.is_some() {
        return f64::INFINITY;
    }
    worst
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(120);
    let peak: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let sys = Arc::new(FpuSystem::new(3, 50.0).unwrap());
    let h0 = sys.canonical_energy();
    let q0 = sys.canonical_initial_state().q().to_vec();

    let flow = IntegratorMap::new(
        sys.clone(),
        IntegratorSpec::new(Scheme::Css4, 0.4 / 256.0, Precision::Double).unwrap(),
        0.4,
    )
    .unwrap();
    let fine = IntegratorMap::new(
        sys.clone(),
        IntegratorSpec::new(Scheme::Css4, 0.1 / 128.0, Precision::Double).unwrap(),
        0.1,
    )
    .unwrap();

    let hmc_cfg = SamplerConfig {
        target_energy: h0,
        q0: q0.clone(),
        sigma: 0.1,
        chains: 10,
        transitions: 500,
        level_sets: 100,
        trajectories: 5,
        traj_len: 10,
        seed: 2024,
        max_rejects: 10_000,
    };
    let t0 = std::time::Instant::now();
    let hmc_set = hmc_h0(sys.as_ref(), &flow, &hmc_cfg).unwrap();
    let te_set = traj_ensemble_h0(sys.as_ref(), &flow, &hmc_cfg).unwrap();
    println!("sampled hmc {} te {} in {:.1?}", hmc_set.len(), te_set.len(), t0.elapsed());

    let t0 = std::time::Instant::now();
    let hmc_ds = build_training_set(&hmc_set, &fine, 5).unwrap();
    let te_ds = build_training_set(&te_set, &fine, 5).unwrap();
    println!("targets in {:.1?}", t0.elapsed());

    let arch = Arch { hidden_layers: 4, width: 64, state_dim: 12 };
    let t = sys.energy_transform();
    for (name, metric, ds) in [
        ("hmc-ebe", LossMetric::Ebe, &hmc_ds),
        ("hmc-mse", LossMetric::Mse, &hmc_ds),
        ("te-ebe", LossMetric::Ebe, &te_ds),
    ] {
        for seed in [11u64, 22, 33] {
            let cfg = TrainConfig {
                sequence_len: 5,
                metric,
                epochs,
                batch_size: 128,
                lr: OneCycleSchedule { initial: 1e-4, peak, end: 1e-5 },
                weight_decay: 1e-5,
                seed,
            };
            let t0 = std::time::Instant::now();
            let (params, history) = train(ds, arch, &cfg, t).unwrap();
            let full = dataset_loss(&params, ds, 5, metric, t).unwrap();
            let e100 = energy_err_100(&sys, &params);
            println!(
                "{name} seed {seed}: loss {:.3e} -> {:.3e} (full {full:.3e})  e100 {e100:.3e}  [{:.1?}]",
                history.epoch_loss[0],
                history.epoch_loss.last().unwrap(),
                t0.elapsed()
            );
        }
    }
}
