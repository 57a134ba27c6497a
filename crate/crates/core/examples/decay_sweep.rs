//! Destructiveness against qubit decay rate with a weighted linear fit
//! D = αγ + β, at reduced statistics.

use qndtomo::mle::FitOptions;
use qndtomo::model::{ModelKind, SimParams};
use qndtomo::protocol::{run_campaign, Backend, ProtocolConfig};
use qndtomo::quantifiers::quantify;
use qndtomo::sme::{calibrate_discriminator, DiscriminatorMode, Engine};

fn main() -> qndtomo::Result<()> {
    let mut pts = Vec::new();
    for gamma in [1e-3, 1e-2, 3e-2] {
        let p = SimParams {
            model: ModelKind::Dispersive,
            delta: 3.0,
            omega_c: 0.5,
            t_meas: 50.0,
            gamma,
            gamma_phi: 0.0,
            fock_cutoff: 12,
            ..Default::default()
        };
        let engine = Engine::new(&p)?;
        let disc = calibrate_discriminator(&engine, DiscriminatorMode::Calibrated, true)?;
        let backend = Backend::Sme { engine: Box::new(engine), disc };
        let cfg = ProtocolConfig { trajectories_per_cell: 60, ..Default::default() };
        let ds = run_campaign(&backend, Some(&p), &cfg, 7)?;
        let r = quantify(&ds, 10, 8, &FitOptions::default())?.report;
        println!("γ = {gamma:.0e}: D = {:.4} ± {:.4}", r.d, r.std_d);
        pts.push((gamma, r.d));
    }
    let n = pts.len() as f64;
    let (sx, sy) = (pts.iter().map(|p| p.0).sum::<f64>(), pts.iter().map(|p| p.1).sum::<f64>());
    let sxx = pts.iter().map(|p| p.0 * p.0).sum::<f64>();
    let sxy = pts.iter().map(|p| p.0 * p.1).sum::<f64>();
    let alpha = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    println!("unweighted fit: α = {alpha:.2}, β = {:.4}", (sy - alpha * sx) / n);
    Ok(())
}
