//! Analytic erfc readout fidelity of the dispersive model against a direct
//! Monte Carlo estimate of p(n|n).

use qndtomo::analytics::{fidelity_analytic, snr_dispersive};
use qndtomo::linalg::{ONE, ZERO};
use qndtomo::model::{ModelKind, SimParams};
use qndtomo::sme::{calibrate_discriminator, trajectory_rng, DiscriminatorMode, Engine, QuantumState};

fn main() -> qndtomo::Result<()> {
    let n = 200;
    for delta in [5.0, 10.0, 20.0] {
        let p = SimParams {
            model: ModelKind::Dispersive,
            delta,
            omega_c: 0.1,
            t_meas: 50.0,
            gamma: 0.0,
            gamma_phi: 0.0,
            ..Default::default()
        };
        let engine = Engine::new(&p)?;
        let disc = calibrate_discriminator(&engine, DiscriminatorMode::Simple, true)?;
        let mut correct = 0;
        for q in 0..2 {
            let psi = if q == 0 { [ONE, ZERO] } else { [ZERO, ONE] };
            for t in 0..n {
                let mut rng = trajectory_rng(9, (q << 32 | t) as u64);
                correct += usize::from(
                    engine.simulate_trajectory(QuantumState::product_vacuum(&psi, p.fock_cutoff), &disc, &mut rng)?.outcome == q,
                );
            }
        }
        let f_mc = correct as f64 / (2 * n) as f64;
        let se = (f_mc * (1.0 - f_mc) / (2 * n) as f64).sqrt();
        let snr = snr_dispersive(&p)?;
        println!("Δ = {delta:4}: SNR = {snr:.3}, analytic F = {:.4}, simulated F = {f_mc:.4} ± {se:.4}", fidelity_analytic(snr)?);
    }
    Ok(())
}
