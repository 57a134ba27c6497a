//! One homodyne trajectory per basis state of the dispersive model, with
//! the integrated current and the assigned outcome.

use qndtomo::linalg::{ONE, ZERO};
use qndtomo::model::{ModelKind, SimParams};
use qndtomo::sme::{calibrate_discriminator, trajectory_rng, DiscriminatorMode, Engine, QuantumState};

fn main() -> qndtomo::Result<()> {
    let p = SimParams { model: ModelKind::Dispersive, delta: 10.0, omega_c: 0.1, t_meas: 50.0, ..Default::default() };
    let engine = Engine::new(&p)?;
    let disc = calibrate_discriminator(&engine, DiscriminatorMode::Calibrated, true)?;
    println!("threshold δ = {:.4}, orientation {:?}", disc.threshold, disc.orientation);
    for (q, name) in [(0, "g"), (1, "e")] {
        let psi = if q == 0 { [ONE, ZERO] } else { [ZERO, ONE] };
        let mut rng = trajectory_rng(p.seed, q as u64);
        let rec = engine.simulate_trajectory(QuantumState::product_vacuum(&psi, p.fock_cutoff), &disc, &mut rng)?;
        let samples = rec.current_samples();
        let stride = samples.len() / 10;
        let coarse: Vec<String> = samples.iter().step_by(stride.max(1)).map(|s| format!("{s:+.3}")).collect();
        println!(
            "|{name}⟩: J = {:+.4} → outcome {}, top-Fock population {:.1e}\n    current samples: {}",
            rec.integrated_current,
            ["g", "e"][rec.outcome],
            rec.top_fock_population,
            coarse.join(" ")
        );
    }
    Ok(())
}
