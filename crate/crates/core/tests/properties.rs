//! Cross-module properties: instrument invariants under the MLE
//! round trip, integrator step convergence and the qutrit backend.

use proptest::prelude::*;
use qndtomo::linalg::{kron, CMatrix, C64, ONE, ZERO};
use qndtomo::mle::{fit_choi, fit_povm, predicted_probabilities, reshuffle, ChoiSet, FitOptions};
use qndtomo::model::{ModelKind, SimParams};
use qndtomo::protocol::{
    exact_probabilities, run_shot, standard_input_densities, Backend, GateSet, KrausSet, ProtocolConfig,
};
use qndtomo::quantifiers::{destructiveness_qubit, qndness, readout_fidelity};
use qndtomo::sme::{calibrate_discriminator, integrate_current, trajectory_rng, DiscriminatorMode, Engine, QuantumState};

/// Random two-outcome instrument: K_n = V_n S^{-1/2} with S = Σ V†V.
fn random_instrument(v: &[f64]) -> KrausSet {
    let m = |o: usize| CMatrix::from_fn(2, 2, |r, c| C64::new(v[o + 2 * (2 * r + c)], v[o + 2 * (2 * r + c) + 1]));
    let (a, b) = (m(0), m(8));
    let mut s = a.dagger().matmul(&a);
    s.axpy(ONE, &b.dagger().matmul(&b));
    let w = qndtomo::linalg::psd_inv_sqrt(&s, 1e-12).unwrap();
    KrausSet::new(vec![vec![a.matmul(&w)], vec![b.matmul(&w)]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exact_data_round_trip_recovers_any_instrument(v in prop::collection::vec(-1.0f64..1.0, 16)) {
        let kraus = random_instrument(&v);
        let truth = ChoiSet::from_kraus(&kraus);
        prop_assume!(truth.chois.iter().all(|c| c.max_abs() > 1e-2));
        let inputs = standard_input_densities();
        let gates = GateSet::HalfPi.unitaries();
        let probs = exact_probabilities(&kraus, &inputs, &gates);
        let opts = FitOptions::default();
        let (povm, _) = fit_povm(&probs, &inputs, &opts).unwrap();
        let (cs, _) = fit_choi(&probs, &povm, &gates, &inputs, &opts).unwrap();
        cs.validate(Some(&povm)).unwrap();
        // the protocol fixes the instrument only through its predictions
        let pred = predicted_probabilities(&povm, &cs, &inputs, &gates);
        for n in 0..2 { for k in 0..6 {
            prop_assert!((pred.p1(n, k) - probs.p1(n, k)).abs() < 1e-5);
            for m in 0..2 { for j in 0..3 {
                prop_assert!((pred.p2(m, n, j, k) - probs.p2(m, n, j, k)).abs() < 1e-5);
            }}
        }}
        prop_assert!((0.0..=1.0 + 1e-9).contains(&readout_fidelity(&povm)));
        prop_assert!((0.0..=1.0 + 1e-9).contains(&qndness(&cs)));
        prop_assert!(destructiveness_qubit(&cs).unwrap() <= 1.0 + 1e-9);
    }

    #[test]
    fn reshuffle_maps_kraus_products_to_psd(v in prop::collection::vec(-1.0f64..1.0, 16)) {
        let kraus = random_instrument(&v);
        for n in 0..2 {
            let k = &kraus.outcomes[n][0];
            let choi = kron(k, &k.conj());
            let tilde = reshuffle(&choi, 2);
            prop_assert!(reshuffle(&tilde, 2).max_abs_diff(&choi) == 0.0);
            let eig = qndtomo::linalg::hermitian_eig(&tilde.hermitian_part()).unwrap();
            prop_assert!(eig.min_value() > -1e-12);
        }
    }
}

fn mean_current(p: &SimParams, n: usize) -> (f64, f64) {
    let engine = Engine::new(p).unwrap();
    let disc = calibrate_discriminator(&engine, DiscriminatorMode::Simple, false).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let psi = [C64::new(s, 0.0), C64::new(s, 0.0)];
    let js: Vec<f64> = (0..n)
        .map(|t| {
            let mut rng = trajectory_rng(12, t as u64);
            let rec = engine.simulate_trajectory(QuantumState::product_vacuum(&psi, p.fock_cutoff), &disc, &mut rng).unwrap();
            integrate_current(&rec, &disc)
        })
        .collect();
    let m = js.iter().sum::<f64>() / n as f64;
    let var = js.iter().map(|j| (j - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

#[test]
fn halving_dt_leaves_current_statistics_unchanged() {
    let base = SimParams {
        model: ModelKind::Dispersive,
        delta: 10.0,
        omega_c: 0.2,
        t_meas: 10.0,
        fock_cutoff: 6,
        gamma: 0.0,
        gamma_phi: 0.0,
        dt: Some(0.01),
        ..Default::default()
    };
    let fine = SimParams { dt: Some(0.005), ..base.clone() };
    let (m1, s1) = mean_current(&base, 1000);
    let (m2, s2) = mean_current(&fine, 1000);
    // independent noise at the two step sizes: σ of the difference
    assert!((m1 - m2).abs() < (s1 * s1 + s2 * s2).sqrt(), "{m1} ± {s1} vs {m2} ± {s2}");

    // noiseless reference current of |g⟩: pure discretization error
    let reference = |p: &SimParams| {
        let engine = Engine::new(p).unwrap();
        calibrate_discriminator(&engine, DiscriminatorMode::Calibrated, false).unwrap().reference.unwrap().0
    };
    let (a, b) = (reference(&base), reference(&fine));
    assert!((a - b).abs() < 1e-3 * a.abs(), "{a} vs {b}");
}

#[test]
fn qutrit_backend_runs_the_qubit_protocol() {
    let p = SimParams {
        model: ModelKind::MultilevelRwa,
        qubit_dim: 3,
        alpha_q: Some(-0.5),
        delta: 10.0,
        t_meas: 5.0,
        fock_cutoff: 5,
        ..Default::default()
    };
    let engine = Engine::new(&p).unwrap();
    let disc = calibrate_discriminator(&engine, DiscriminatorMode::Calibrated, true).unwrap();
    let backend = Backend::Sme { engine: Box::new(engine), disc };
    let cfg = ProtocolConfig { trajectories_per_cell: 1, ..Default::default() };
    let mut rng = trajectory_rng(1, 1);
    for k in 0..6 {
        let shot = run_shot(k, 2, &backend, &cfg, &mut rng).unwrap();
        assert!(shot.n < 2 && shot.m < 2);
    }
    let embedded = qndtomo::protocol::embed_qubit_operator(&GateSet::Pi.unitaries()[1], 3);
    assert!(embedded.dagger().matmul(&embedded).max_abs_diff(&CMatrix::identity(3)) < 1e-15);
    assert_eq!(embedded[(2, 2)], ONE);
    assert_eq!(embedded[(0, 2)], ZERO);
}
