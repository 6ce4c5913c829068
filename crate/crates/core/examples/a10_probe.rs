use pint_core::integrators::{IntegratorSpec, Precision, Scheme};
use pint_core::sampling::{hmc_h0, min_distance_diagnostic, traj_ensemble_h0, SamplerConfig};
use pint_core::solver::{apply_sequence, IntegratorMap};
use pint_core::system::FpuSystem;
use std::sync::Arc;

fn main() {
    let sys = Arc::new(FpuSystem::new(3, 50.0).unwrap());
    let h0 = sys.canonical_energy();
    let u0 = sys.canonical_initial_state();

    let flow = IntegratorMap::new(
        sys.clone(),
        IntegratorSpec::new(Scheme::Css4, 0.4 / 256.0, Precision::Double).unwrap(),
        0.4,
    )
    .unwrap();
    // reference trajectory: 100 steps of dt = 1
    let ref_map = IntegratorMap::new(
        sys.clone(),
        IntegratorSpec::new(Scheme::Css4, 2f64.powi(-8), Precision::Double).unwrap(),
        1.0,
    )
    .unwrap();
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let reference = apply_sequence(&ref_map, &u0, n).unwrap();

    let cfg = SamplerConfig {
        target_energy: h0,
        q0: u0.q().to_vec(),
        sigma: 0.1,
        chains: 10,
        transitions: 500,
        level_sets: 100,
        trajectories: 5,
        traj_len: 10,
        seed: 99,
        max_rejects: 10_000,
    };
    let hmc = hmc_h0(sys.as_ref(), &flow, &cfg).unwrap();
    let te = traj_ensemble_h0(sys.as_ref(), &flow, &cfg).unwrap();
    for (name, set) in [("hmc", &hmc), ("te", &te)] {
        let d = min_distance_diagnostic(&reference, set).unwrap();
        let seg = d.len() / 10;
        let means: Vec<f64> = (0..10)
            .map(|i| d[i * seg..(i + 1) * seg].iter().sum::<f64>() / seg as f64)
            .collect();
        let line: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
        println!("{name}: {}", line.join(" "));
    }
}
