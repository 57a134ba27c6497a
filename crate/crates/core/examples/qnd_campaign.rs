//! Full pipeline on the JC model: two-readout campaign, two-stage maximum
//! likelihood reconstruction and the F, Q, D quantifiers. Small statistics
//! keep the runtime short; the command-line tool runs the production scale.

use qndtomo::mle::FitOptions;
use qndtomo::model::SimParams;
use qndtomo::protocol::{run_campaign, Backend, ProtocolConfig};
use qndtomo::quantifiers::quantify;
use qndtomo::sme::{calibrate_discriminator, DiscriminatorMode, Engine};

fn main() -> qndtomo::Result<()> {
    let p = SimParams { t_meas: 40.0, fock_cutoff: 8, ..Default::default() };
    let engine = Engine::new(&p)?;
    let disc = calibrate_discriminator(&engine, DiscriminatorMode::Calibrated, true)?;
    let backend = Backend::Sme { engine: Box::new(engine), disc };
    let cfg = ProtocolConfig { trajectories_per_cell: 100, ..Default::default() };
    let ds = run_campaign(&backend, Some(&p), &cfg, 42)?;
    println!("{} shots, gate-independence χ² = {:?}", ds.total_shots(), ds.gate_independence_chi2());
    let q = quantify(&ds, 10, 43, &FitOptions::default())?;
    let r = &q.report;
    println!("Δ = {}: F = {:.3}±{:.3}, Q = {:.3}±{:.3}, D = {:.3}±{:.3}", p.delta, r.f, r.std_f, r.q, r.std_q, r.d, r.std_d);
    for n in 0..2 {
        println!("Υ_{n} diagonal: {:?}", q.chois.chois[n].diag().iter().map(|z| format!("{:.3}", z.re)).collect::<Vec<_>>());
    }
    Ok(())
}
