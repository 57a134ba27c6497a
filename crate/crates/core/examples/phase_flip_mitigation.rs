//! Reconstructs a noisy phase-flip detector from exact probabilities and
//! uses its POVM to undo readout errors on a measured distribution.

use qndtomo::mle::{fit_choi, fit_povm, ChoiSet, FitOptions};
use qndtomo::protocol::{exact_probabilities, standard_input_densities, GateSet, KrausSet};
use qndtomo::quantifiers::{computational_basis, destructiveness_qubit, mitigate, mitigation_matrix, qndness, readout_fidelity};

fn main() -> qndtomo::Result<()> {
    let eps = 0.1;
    let kraus = KrausSet::phase_flip(eps)?;
    let inputs = standard_input_densities();
    let gates = GateSet::HalfPi.unitaries();
    let probs = exact_probabilities(&kraus, &inputs, &gates);
    let opts = FitOptions::default();
    let (povm, _) = fit_povm(&probs, &inputs, &opts)?;
    let (chois, _) = fit_choi(&probs, &povm, &gates, &inputs, &opts)?;
    let oracle = ChoiSet::from_kraus(&kraus);
    let err = (0..2).map(|n| chois.chois[n].max_abs_diff(&oracle.chois[n])).fold(0.0, f64::max);
    println!("ε = {eps}: F = {:.6}, Q = {:.6}, D = {:.1e}, max deviation from Kraus oracle {err:.1e}",
        readout_fidelity(&povm), qndness(&chois), destructiveness_qubit(&chois)?);

    let b = mitigation_matrix(&povm, &computational_basis(2))?;
    let truth = [0.7, 0.3];
    let measured: Vec<f64> = (0..2).map(|m| (0..2).map(|s| b[m][s] * truth[s]).sum()).collect();
    let fixed = mitigate(&b, &measured)?;
    println!("measured {measured:.4?} → mitigated {:.6?} (true {truth:?})", fixed.probabilities);
    Ok(())
}
