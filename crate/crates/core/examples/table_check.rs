use pint_core::integrators::{advance, IntegratorSpec, Precision, Scheme};
use pint_core::system::{energy_error, trajectory_error, FpuSystem};

fn main() {
    let sys = FpuSystem::new(3, 300.0).unwrap();
    let u0 = sys.canonical_initial_state();
    let reference = IntegratorSpec::new(Scheme::Kl8, 2f64.powi(-14), Precision::DoubleDouble).unwrap();
    let t0 = std::time::Instant::now();
    let u_ref = advance(&sys, &u0, 1.0, &reference).unwrap();
    println!("reference built in {:.2?}", t0.elapsed());
    let rows = [
        (Scheme::Css4, -9, 2.62e-3, 4.3e-6),
        (Scheme::Css4, -8, 4.35e-2, 1.7e-4),
        (Scheme::Vv, -14, 4.19e-3, 3.4e-7),
        (Scheme::Vv, -11, 0.231, 6.5e-4),
    ];
    for (scheme, k, t_ref, e_ref) in rows {
        let spec = IntegratorSpec::new(scheme, 2f64.powi(k), Precision::Double).unwrap();
        let t0 = std::time::Instant::now();
        let u = advance(&sys, &u0, 1.0, &spec).unwrap();
        let dt = t0.elapsed();
        let te = trajectory_error(&u, &u_ref).unwrap();
        let ee = energy_error(&sys, &u, &u_ref).unwrap();
        println!(
            "{scheme:?} h=2^{k}: traj {te:.4e} (x{:.2} of {t_ref:.2e})  energy {ee:.4e} (x{:.2} of {e_ref:.2e})  [{dt:.2?}]",
            te / t_ref, ee / e_ref
        );
    }
}
