//! Pointer-state Choi matrices of the dispersive readout as the drive grows.

use qndtomo::analytics::{analytic_choi_dispersive, pointer_steady_state};
use qndtomo::model::{ModelKind, SimParams};
use qndtomo::mle::povm_from_choi;
use qndtomo::quantifiers::{destructiveness_qubit, qndness, readout_fidelity};
use qndtomo::sme::{Discriminator, Orientation};

fn main() -> qndtomo::Result<()> {
    for omega in [0.05, 0.1, 0.3, 1.0] {
        let p = SimParams { model: ModelKind::Dispersive, delta: 10.0, omega_c: omega, t_meas: 50.0, ..Default::default() };
        let disc = Discriminator::flat(Orientation::Negative, true);
        let (cs, k) = analytic_choi_dispersive(&p, &disc)?;
        let a = pointer_steady_state(&p, -1.0)?;
        println!(
            "Ω = {omega:4}: |α_∞| = {:.3}, A_g = {:.4}, B_g = {:.4}, |ζ_g| = {:.2e}, F = {:.4}, Q = {:.4}, D = {:.4}",
            a.norm(),
            k.a_g,
            k.b_g,
            k.zeta_g.norm(),
            readout_fidelity(&povm_from_choi(&cs)),
            qndness(&cs),
            destructiveness_qubit(&cs)?
        );
    }
    Ok(())
}
