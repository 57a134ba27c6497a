//! Detector tomography of an ideal projective readout from simulated
//! counts, with bootstrap error bars.

use qndtomo::mle::FitOptions;
use qndtomo::protocol::{run_campaign, Backend, KrausSet, ProtocolConfig};
use qndtomo::quantifiers::quantify;

fn main() -> qndtomo::Result<()> {
    let cfg = ProtocolConfig { trajectories_per_cell: 500, ..Default::default() };
    let ds = run_campaign(&Backend::Mock(KrausSet::ideal(2)), None, &cfg, 1)?;
    let q = quantify(&ds, 20, 2, &FitOptions::default())?;
    let r = &q.report;
    println!("shots {}: F = {:.4}±{:.4}, Q = {:.4}±{:.4}, D = {:.4}±{:.4}", r.shots, r.f, r.std_f, r.q, r.std_q, r.d, r.std_d);
    println!("Π_g = {:?}", q.povm.elements[0].diag());
    let diag = q.chois.diagnostics()?;
    println!("Choi minimum eigenvalue {:.2e}, completeness residual {:.2e}", diag.min_eigenvalue, diag.completeness_residual);
    Ok(())
}
