use pint_core::integrators::{IntegratorSpec, Precision, Scheme};
use pint_core::parareal::{parareal_run, PararealConfig, PararealMode};
use pint_core::solver::{apply_sequence, IntegratorMap};
use pint_core::system::{stiff_spring_energies, FpuSystem};
use std::sync::Arc;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let k = 3;
    let sys = Arc::new(FpuSystem::new(3, 300.0).unwrap());
    let u0 = sys.canonical_initial_state();
    let coarse = IntegratorMap::new(
        sys.clone(),
        IntegratorSpec::new(Scheme::Css4, 2f64.powi(-8), Precision::Double).unwrap(),
        1.0,
    )
    .unwrap();
    let fine = IntegratorMap::new(
        sys.clone(),
        IntegratorSpec::new(Scheme::Kl8, 2f64.powi(-14), Precision::DoubleDouble).unwrap(),
        1.0,
    )
    .unwrap();
    let t0 = std::time::Instant::now();
    let reference = apply_sequence(&fine, &u0, n).unwrap();
    println!("reference ({n} steps) in {:.1?}", t0.elapsed());

    let h0_stiff = stiff_spring_energies(&sys, &u0).unwrap()[3];
    for mode in [PararealMode::Plain, PararealMode::Procrustes] {
        let mut cfg = PararealConfig::new(n, k, 1.0, mode);
        cfg.workers = Some(8);
        cfg.n_trust = Some(n);
        let t0 = std::time::Instant::now();
        let tab = parareal_run(sys.as_ref(), &u0, &coarse, &fine, &cfg, Some(&reference)).unwrap();
        let elapsed = t0.elapsed();
        for row in [0, k] {
            let max_energy = tab.metrics[row]
                .iter()
                .filter_map(|m| m.energy_error)
                .fold(0.0f64, f64::max);
            let max_stiff_dev = tab.states[row]
                .iter()
                .map(|u| (stiff_spring_energies(&sys, u).unwrap()[3] - h0_stiff).abs())
                .fold(0.0f64, f64::max);
            println!(
                "{mode:?} k={row}: max energy err {max_energy:.3e}  max stiff-total dev {max_stiff_dev:.3e}  [{elapsed:.1?}]"
            );
        }
        println!("  pinv worst residual: {:.2e}", tab.pinv_worst_residual);
    }
}
