//! Builds the three model Hamiltonians and compares the dressed-state
//! dispersive shift with g²/Δ and its anharmonic correction.

use qndtomo::linalg::hermitian_eig;
use qndtomo::model::{build_dispersive_hamiltonian, build_jc_hamiltonian, modified_dispersive_shift, ModelKind, SimParams};

fn main() -> qndtomo::Result<()> {
    for delta in [7.7, 19.2, 40.0] {
        let p = SimParams { delta, omega_c: 0.0, fock_cutoff: 6, ..Default::default() };
        let h = build_jc_hamiltonian(&p)?;
        let eig = hermitian_eig(&h)?;
        let chi = p.chi()?;
        println!(
            "Δ = {delta:5.1}: χ = g²/Δ = {chi:.5}, lowest JC levels {:?}",
            eig.values.iter().take(4).map(|e| format!("{e:.4}")).collect::<Vec<_>>()
        );
        let pd = SimParams { model: ModelKind::Dispersive, ..p.clone() };
        let hd = build_dispersive_hamiltonian(&pd)?;
        println!("          dispersive H is diagonal: {}", hd.hermitian_deviation() == 0.0 && (0..hd.rows()).all(|i| (0..hd.cols()).all(|j| i == j || hd[(i, j)].norm() == 0.0)));
        println!("          transmon shift with α = −0.3: {:.5}", modified_dispersive_shift(1.0, delta, -0.3)?);
    }
    Ok(())
}
