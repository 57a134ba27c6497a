//! Compares the flat-weight and matched-filter discriminators on the JC
//! model, where the reference currents are asymmetric.

use qndtomo::linalg::{ONE, ZERO};
use qndtomo::model::SimParams;
use qndtomo::sme::{calibrate_discriminator, trajectory_rng, DiscriminatorMode, Engine, QuantumState};

fn main() -> qndtomo::Result<()> {
    let p = SimParams { fock_cutoff: 8, ..Default::default() };
    let engine = Engine::new(&p)?;
    let n = 100;
    for mode in [DiscriminatorMode::Simple, DiscriminatorMode::Calibrated] {
        let disc = calibrate_discriminator(&engine, mode, true)?;
        let mut correct = 0;
        for q in 0..2 {
            let psi = if q == 0 { [ONE, ZERO] } else { [ZERO, ONE] };
            for t in 0..n {
                let mut rng = trajectory_rng(5, (q << 32 | t) as u64);
                let rec = engine.simulate_trajectory(QuantumState::product_vacuum(&psi, p.fock_cutoff), &disc, &mut rng)?;
                correct += usize::from(rec.outcome == q);
            }
        }
        println!(
            "{mode:?}: δ = {:+.4}, references {:?}, assignment fidelity {:.3} over {} shots",
            disc.threshold,
            disc.reference,
            correct as f64 / (2 * n) as f64,
            2 * n
        );
    }
    Ok(())
}
