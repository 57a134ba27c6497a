//! Figures of merit of a reconstructed measurement: readout fidelity F,
//! QND-ness Q, destructiveness D, and readout-error mitigation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eig, solve_real, CMatrix, C64, ONE, ZERO};
use crate::mle::{fit_choi, fit_povm, ChoiSet, FitOptions, FitReport, Povm};
use crate::model::SimParams;
use crate::protocol::{bootstrap_resample, empirical_probabilities, ShotDataset};

/// F = (1/N) Σ_n ⟨n|Π_n|n⟩ in the computational basis.
pub fn readout_fidelity(povm: &Povm) -> f64 {
    let n = povm.n_outcomes();
    (0..n).map(|i| povm.elements[i][(i, i)].re).sum::<f64>() / n as f64
}

/// Q = (1/N) Σ_n ⟨nn|Υ_n|nn⟩
pub fn qndness(cs: &ChoiSet) -> f64 {
    let d = cs.dim;
    let n = cs.n_outcomes();
    (0..n).map(|i| cs.chois[i][(i * d + i, i * d + i)].re).sum::<f64>() / n as f64
}

/// Heisenberg-picture action of the unconditional channel Σ_n E_n.
pub fn adjoint_apply(cs: &ChoiSet, o: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(cs.dim, cs.dim);
    for n in 0..cs.n_outcomes() {
        out.axpy(ONE, &cs.adjoint_apply(n, o));
    }
    out
}

/// Spectral projectors of a Hermitian observable, one per distinct
/// eigenvalue (eigenvalues closer than `tol` are merged).
pub fn spectral_projectors(o: &CMatrix, tol: f64) -> Result<Vec<CMatrix>> {
    let eig = hermitian_eig(o)?;
    let d = o.rows();
    let mut out: Vec<CMatrix> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for i in 0..d {
        let v: Vec<C64> = (0..d).map(|r| eig.vectors[(r, i)]).collect();
        let p = CMatrix::outer(&v);
        if eig.values[i] - last > tol || out.is_empty() {
            out.push(p);
        } else {
            out.last_mut().unwrap().axpy(ONE, &p);
        }
        last = eig.values[i];
    }
    Ok(out)
}

/// Rank-one projectors onto the computational basis states.
pub fn computational_projectors(d: usize) -> Vec<CMatrix> {
    (0..d).map(|n| CMatrix::unit(d, n, n)).collect()
}

fn check_projectors(ps: &[CMatrix]) -> Result<usize> {
    let d = ps.first().map(|p| p.rows()).ok_or_else(|| invalid("no projectors given"))?;
    let mut total = CMatrix::zeros(d, d);
    for (j, pj) in ps.iter().enumerate() {
        if pj.rows() != d || !pj.is_square() {
            return Err(invalid("projectors must share one square dimension"));
        }
        for (k, pk) in ps.iter().enumerate() {
            let prod = pj.matmul(pk);
            let expect = if j == k { pj.clone() } else { CMatrix::zeros(d, d) };
            if prod.max_abs_diff(&expect) > 1e-10 {
                return Err(invalid(format!("projectors {j} and {k} are not orthogonal projectors")));
            }
        }
        total.axpy(ONE, pj);
    }
    if total.max_abs_diff(&CMatrix::identity(d)) > 1e-10 {
        return Err(invalid("projectors do not resolve the identity"));
    }
    Ok(d)
}

/// B_jk = Tr([P_j − E†(P_j)][P_k − E†(P_k)]), real symmetric.
pub fn destructiveness_matrix(cs: &ChoiSet, projectors: &[CMatrix]) -> Result<Vec<Vec<f64>>> {
    let d = check_projectors(projectors)?;
    if d != cs.dim {
        return Err(invalid("projector dimension does not match the Choi set"));
    }
    let diffs: Vec<CMatrix> = projectors.iter().map(|p| p - &adjoint_apply(cs, p)).collect();
    Ok(diffs.iter().map(|a| diffs.iter().map(|b| a.trace_product(b).re).collect()).collect())
}

/// D = ½ √λ_max(B).
pub fn destructiveness(cs: &ChoiSet, projectors: &[CMatrix]) -> Result<f64> {
    let b = destructiveness_matrix(cs, projectors)?;
    let n = b.len();
    let m = CMatrix::from_fn(n, n, |i, j| C64::new(0.5 * (b[i][j] + b[j][i]), 0.0));
    Ok(0.5 * hermitian_eig(&m)?.max_value().max(0.0).sqrt())
}

/// D = ‖σz − E†(σz)‖_F / √8 for a qubit. Equals [`destructiveness`] with
/// the σz projectors whenever E†(I) = I.
pub fn destructiveness_qubit(cs: &ChoiSet) -> Result<f64> {
    if cs.dim != 2 {
        return Err(invalid("closed-form destructiveness needs a qubit"));
    }
    let sz = crate::model::sigma_z(2);
    Ok((&sz - &adjoint_apply(cs, &sz)).frobenius_norm() / 8f64.sqrt())
}

/// B[n][m] = ⟨m|Π_n|m⟩ for an observable diagonal in `basis`.
pub fn mitigation_matrix(povm: &Povm, basis: &[Vec<C64>]) -> Result<Vec<Vec<f64>>> {
    let d = povm.dim;
    if basis.len() != d || basis.iter().any(|v| v.len() != d) {
        return Err(invalid("eigenbasis does not match the POVM dimension"));
    }
    let bra_ket = |a: &[C64], m: &CMatrix, b: &[C64]| -> C64 {
        let mb = m.matvec(b);
        a.iter().zip(&mb).map(|(x, y)| x.conj() * y).sum()
    };
    let mut out = vec![vec![0.0; d]; povm.n_outcomes()];
    for (n, pi) in povm.elements.iter().enumerate() {
        for (m, vm) in basis.iter().enumerate() {
            for (l, vl) in basis.iter().enumerate() {
                let z = bra_ket(vm, pi, vl);
                if m != l && z.norm() > 1e-6 {
                    return Err(Error::NotCompatible(format!(
                        "Π_{n} has off-diagonal element {:.2e} in the observable eigenbasis",
                        z.norm()
                    )));
                }
            }
            out[n][m] = bra_ket(vm, pi, vm).re;
        }
    }
    Ok(out)
}

pub fn computational_basis(d: usize) -> Vec<Vec<C64>> {
    (0..d).map(|n| (0..d).map(|i| if i == n { ONE } else { ZERO }).collect()).collect()
}

/// Result of inverting the confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mitigated {
    pub probabilities: Vec<f64>,
    /// Set when an entry lies outside [0, 1] by more than 1e-9, which
    /// happens with noisy input.
    pub out_of_range: bool,
}

/// p = B⁻¹ p̃
pub fn mitigate(b: &[Vec<f64>], measured: &[f64]) -> Result<Mitigated> {
    let p = solve_real(b, measured)?;
    let out_of_range = p.iter().any(|&x| !(-1e-9..=1.0 + 1e-9).contains(&x));
    Ok(Mitigated { probabilities: p, out_of_range })
}

/// Point estimates with bootstrap spreads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifierReport {
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub std_f: f64,
    pub std_q: f64,
    pub std_d: f64,
    pub bootstrap_resamples: usize,
    pub shots: u64,
    pub dataset_hash: String,
    pub params: Option<SimParams>,
}

impl QuantifierReport {
    pub const CSV_HEADER: &'static str =
        "model,delta,g,kappa,gamma,gamma_phi,omega_c,t_meas,shots,F,std_F,Q,std_Q,D,std_D,bootstrap,dataset_hash";

    /// Physical columns are empty for the mock backend and spreads are
    /// empty when no resamples were drawn.
    pub fn csv_row(&self) -> String {
        use crate::cli::fmt12;
        let phys = match &self.params {
            Some(p) => {
                let model = serde_json::to_value(p.model).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                let nums = [p.delta, p.g, p.kappa, p.gamma, p.gamma_phi, p.omega_c, p.t_meas].map(fmt12);
                format!("{model},{}", nums.join(","))
            }
            None => "mock,,,,,,,".to_string(),
        };
        let sd = |x: f64| if self.bootstrap_resamples > 0 { fmt12(x) } else { String::new() };
        format!(
            "{phys},{},{},{},{},{},{},{},{},{}",
            self.shots,
            fmt12(self.f),
            sd(self.std_f),
            fmt12(self.q),
            sd(self.std_q),
            fmt12(self.d),
            sd(self.std_d),
            self.bootstrap_resamples,
            self.dataset_hash
        )
    }
}

/// Everything `quantify` produces.
#[derive(Debug, Clone)]
pub struct Quantification {
    pub report: QuantifierReport,
    pub povm: Povm,
    pub chois: ChoiSet,
    /// Bootstrap standard deviation of every Choi entry, real and imaginary
    /// parts separately.
    pub choi_std: Vec<CMatrix>,
    pub povm_fit: FitReport,
    pub choi_fits: Vec<FitReport>,
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

struct Estimate {
    f: f64,
    q: f64,
    d: f64,
    povm: Povm,
    chois: ChoiSet,
    povm_fit: FitReport,
    choi_fits: Vec<FitReport>,
}

fn estimate(ds: &ShotDataset, opts: &FitOptions) -> Result<Estimate> {
    let probs = empirical_probabilities(ds)?;
    let inputs: Vec<CMatrix> = ds.meta.protocol.inputs().iter().map(|v| CMatrix::outer(v)).collect();
    let gates = ds.meta.protocol.gates();
    let (povm, povm_fit) = fit_povm(&probs, &inputs, opts)?;
    let (chois, choi_fits) = fit_choi(&probs, &povm, &gates, &inputs, opts)?;
    let d = destructiveness(&chois, &computational_projectors(povm.dim))?;
    Ok(Estimate { f: readout_fidelity(&povm), q: qndness(&chois), d, povm, chois, povm_fit, choi_fits })
}

/// Reconstructs the measurement from `ds` and evaluates F, Q and D, with
/// spreads from `b_boot` multinomial resamples drawn with `boot_seed`.
pub fn quantify(ds: &ShotDataset, b_boot: usize, boot_seed: u64, opts: &FitOptions) -> Result<Quantification> {
    let point = estimate(ds, opts)?;
    let boots: Vec<Estimate> = if b_boot > 0 {
        bootstrap_resample(ds, b_boot, boot_seed)?
            .par_iter()
            .enumerate()
            .map(|(r, rs)| {
                estimate(rs, opts).map_err(|e| match e {
                    Error::OptimizationFailure(m) => Error::OptimizationFailure(format!("bootstrap resample {r}: {m}")),
                    Error::NumericalFailure(m) => Error::NumericalFailure(format!("bootstrap resample {r}: {m}")),
                    other => other,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let col = |f: &dyn Fn(&Estimate) -> f64| sample_std(&boots.iter().map(f).collect::<Vec<_>>());
    let dd = point.chois.dim * point.chois.dim;
    let choi_std = (0..point.chois.n_outcomes())
        .map(|n| {
            CMatrix::from_fn(dd, dd, |r, s| {
                let re: Vec<f64> = boots.iter().map(|b| b.chois.chois[n][(r, s)].re).collect();
                let im: Vec<f64> = boots.iter().map(|b| b.chois.chois[n][(r, s)].im).collect();
                C64::new(sample_std(&re), sample_std(&im))
            })
        })
        .collect();
    let report = QuantifierReport {
        f: point.f,
        q: point.q,
        d: point.d,
        std_f: col(&|e| e.f),
        std_q: col(&|e| e.q),
        std_d: col(&|e| e.d),
        bootstrap_resamples: b_boot,
        shots: ds.total_shots(),
        dataset_hash: ds.meta.config_hash(),
        params: ds.meta.params.clone(),
    };
    Ok(Quantification {
        report,
        povm: point.povm,
        chois: point.chois,
        choi_std,
        povm_fit: point.povm_fit,
        choi_fits: point.choi_fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::model::{sigma_x, sigma_z};
    use crate::protocol::{run_campaign, Backend, KrausSet, ProtocolConfig};
    use proptest::prelude::*;

    fn unitary_choi(u: &CMatrix) -> ChoiSet {
        ChoiSet::from_kraus(&KrausSet::new(vec![vec![u.clone()]]).unwrap())
    }

    fn depolarizing() -> ChoiSet {
        // E(ρ) = I/2 via Kraus operators |i⟩⟨j|/√2
        let ks = (0..2).flat_map(|i| (0..2).map(move |j| CMatrix::unit(2, i, j).scale_real(0.5f64.sqrt()))).collect();
        ChoiSet::from_kraus(&KrausSet::new(vec![ks]).unwrap())
    }

    #[test]
    fn fidelity_examples() {
        let ideal = Povm::new(KrausSet::ideal(2).povm_elements()).unwrap();
        assert_eq!(readout_fidelity(&ideal), 1.0);
        let half = Povm::new(vec![CMatrix::identity(2).scale_real(0.5); 2]).unwrap();
        assert_eq!(readout_fidelity(&half), 0.5);
        let flip = Povm::new(KrausSet::phase_flip(0.1).unwrap().povm_elements()).unwrap();
        assert!((readout_fidelity(&flip) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn qndness_examples() {
        assert_eq!(qndness(&ChoiSet::from_kraus(&KrausSet::ideal(2))), 1.0);
        assert!((qndness(&ChoiSet::from_kraus(&KrausSet::phase_flip(0.1).unwrap())) - 0.9).abs() < 1e-15);
        // ideal POVM followed by full depolarization of the post-state:
        // K_{n,i} = |i⟩⟨n|/√2
        let ks = (0..2)
            .map(|n| (0..2).map(|i| CMatrix::unit(2, i, n).scale_real(0.5f64.sqrt())).collect())
            .collect();
        let cs = ChoiSet::from_kraus(&KrausSet::new(ks).unwrap());
        assert!((qndness(&cs) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adjoint_examples() {
        let o = CMatrix::from_vec(2, 2, vec![c(0.4, 0.0), c(0.2, -0.1), c(0.2, 0.1), c(-0.3, 0.0)]).unwrap();
        assert!(adjoint_apply(&unitary_choi(&CMatrix::identity(2)), &o).max_abs_diff(&o) < 1e-15);
        let sz = sigma_z(2);
        let flipped = adjoint_apply(&unitary_choi(&sigma_x()), &sz);
        assert!(flipped.max_abs_diff(&sz.scale_real(-1.0)) < 1e-15);
        let k = KrausSet::phase_flip(0.3).unwrap();
        let cs = ChoiSet::from_kraus(&k);
        let mut oracle = CMatrix::zeros(2, 2);
        for kk in k.outcomes.iter().flatten() {
            oracle.axpy(ONE, &kk.dagger().matmul(&sz).matmul(kk));
        }
        assert!(adjoint_apply(&cs, &sz).max_abs_diff(&oracle) < 1e-15);
        assert!(adjoint_apply(&cs, &sz).max_abs_diff(&sz) < 1e-15);
    }

    #[test]
    fn destructiveness_examples() {
        let ps = computational_projectors(2);
        assert!(destructiveness(&ChoiSet::from_kraus(&KrausSet::ideal(2)), &ps).unwrap() < 1e-15);
        let dep = depolarizing();
        assert!((destructiveness(&dep, &ps).unwrap() - 0.5).abs() < 1e-12);
        assert!((destructiveness_qubit(&dep).unwrap() - 0.5).abs() < 1e-12);
        for eps in [0.0, 0.2, 0.49] {
            let cs = ChoiSet::from_kraus(&KrausSet::phase_flip(eps).unwrap());
            assert!(destructiveness(&cs, &ps).unwrap() < 1e-12);
        }
        let skew = vec![CMatrix::unit(2, 0, 0), CMatrix::unit(2, 0, 0)];
        assert!(matches!(destructiveness(&dep, &skew), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn spectral_projectors_group_degenerate_eigenvalues() {
        let o = CMatrix::from_diag(&[c(1.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        let ps = spectral_projectors(&o, 1e-9).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(ps[0].max_abs_diff(&CMatrix::from_diag(&[ONE, ZERO, ONE])) < 1e-12);
    }

    #[test]
    fn mitigation_examples() {
        let ideal = Povm::new(KrausSet::ideal(2).povm_elements()).unwrap();
        let basis = computational_basis(2);
        assert_eq!(mitigation_matrix(&ideal, &basis).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let eps = 0.1;
        let flip = Povm::new(KrausSet::phase_flip(eps).unwrap().povm_elements()).unwrap();
        let b = mitigation_matrix(&flip, &basis).unwrap();
        assert!((b[0][0] - 0.9).abs() < 1e-15 && (b[0][1] - 0.1).abs() < 1e-15);
        let p = [0.7, 0.3];
        let measured: Vec<f64> = (0..2).map(|n| b[n][0] * p[0] + b[n][1] * p[1]).collect();
        let back = mitigate(&b, &measured).unwrap();
        assert!((back.probabilities[0] - 0.7).abs() < 1e-12 && !back.out_of_range);
        assert_eq!(mitigate(&[vec![1.0, 0.0], vec![0.0, 1.0]], &p).unwrap().probabilities, p.to_vec());
        let half = mitigation_matrix(&Povm::new(KrausSet::phase_flip(0.5).unwrap().povm_elements()).unwrap(), &basis).unwrap();
        assert!(matches!(mitigate(&half, &p), Err(Error::InvalidArgument(_))));
        let rotated = Povm::new(vec![
            CMatrix::from_vec(2, 2, vec![c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0)]).unwrap(),
            CMatrix::from_vec(2, 2, vec![c(0.5, 0.0), c(-0.5, 0.0), c(-0.5, 0.0), c(0.5, 0.0)]).unwrap(),
        ])
        .unwrap();
        assert!(matches!(mitigation_matrix(&rotated, &basis), Err(Error::NotCompatible(_))));
    }

    #[test]
    fn quantify_ideal_mock() {
        let nt = 1000;
        let cfg = ProtocolConfig { trajectories_per_cell: nt, ..Default::default() };
        let ds = run_campaign(&Backend::Mock(KrausSet::ideal(2)), None, &cfg, 3).unwrap();
        let q = quantify(&ds, 4, 1, &FitOptions::default()).unwrap();
        let bound = 2.0 / (nt as f64).sqrt();
        assert!(q.report.f >= 1.0 - bound && q.report.q >= 1.0 - bound && q.report.d <= bound, "{:?}", q.report);
        let json = serde_json::to_string(&q.report).unwrap();
        assert!(json.contains("\"F\""));
        assert_eq!(q.report.csv_row().split(',').count(), QuantifierReport::CSV_HEADER.split(',').count());
    }

    fn random_channel(seed: &[f64]) -> ChoiSet {
        // two outcomes, two Kraus operators each, normalized by S^{-1/2}
        let mats: Vec<CMatrix> = seed
            .chunks(8)
            .map(|w| CMatrix::from_fn(2, 2, |i, j| c(w[2 * (2 * i + j)], w[2 * (2 * i + j) + 1])))
            .collect();
        let mut s = CMatrix::zeros(2, 2);
        for m in &mats {
            s.axpy(ONE, &m.dagger().matmul(m));
        }
        let w = crate::linalg::psd_inv_sqrt(&s, 1e-14).unwrap();
        let ks: Vec<CMatrix> = mats.iter().map(|m| m.matmul(&w)).collect();
        ChoiSet::from_kraus(&KrausSet::new(vec![ks[..2].to_vec(), ks[2..].to_vec()]).unwrap())
    }

    proptest! {
        #[test]
        fn closed_form_matches_eigenvalue_method(seed in prop::collection::vec(-1.0f64..1.0, 32)) {
            let cs = random_channel(&seed);
            let a = destructiveness(&cs, &computational_projectors(2)).unwrap();
            let b = destructiveness_qubit(&cs).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn destructiveness_matrix_psd_with_uniform_null_vector(seed in prop::collection::vec(-1.0f64..1.0, 32)) {
            let cs = random_channel(&seed);
            let b = destructiveness_matrix(&cs, &computational_projectors(2)).unwrap();
            prop_assert!((b[0][1] - b[1][0]).abs() < 1e-12);
            let m = CMatrix::from_fn(2, 2, |i, j| c(b[i][j], 0.0));
            prop_assert!(hermitian_eig(&m).unwrap().min_value() > -1e-10);
            prop_assert!((b[0][0] + b[0][1]).abs() < 1e-10 && (b[1][0] + b[1][1]).abs() < 1e-10);
            prop_assert!(adjoint_apply(&cs, &CMatrix::identity(2)).max_abs_diff(&CMatrix::identity(2)) < 1e-10);
        }

        #[test]
        fn compatible_mitigation_is_column_stochastic(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let povm = Povm::new(vec![
                CMatrix::from_diag(&[c(a, 0.0), c(b, 0.0)]),
                CMatrix::from_diag(&[c(1.0 - a, 0.0), c(1.0 - b, 0.0)]),
            ]).unwrap();
            let m = mitigation_matrix(&povm, &computational_basis(2)).unwrap();
            for col in 0..2 {
                prop_assert!((m[0][col] + m[1][col] - 1.0).abs() < 1e-8);
            }
        }
    }
}
