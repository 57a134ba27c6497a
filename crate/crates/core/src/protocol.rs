//! The two-readout characterization experiment: prepare ρ_k, read out,
//! reset the cavity, apply U_j, read out again. Count tables, their
//! self-describing file format and bootstrap resampling live here too.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, CMatrix, C64, ONE, ZERO};
use crate::model::{sigma_x, sigma_y, SimParams};
use crate::sme::{trajectory_rng, Discriminator, Engine, QuantumState};

pub const DATASET_MAGIC: &str = "#QNDTOMO-DATASET v1";

/// The six preparation states |g⟩, |e⟩, (|g⟩±|e⟩)/√2, (|g⟩±i|e⟩)/√2.
pub fn standard_inputs() -> Vec<Vec<C64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        vec![ONE, ZERO],
        vec![ZERO, ONE],
        vec![c(s, 0.0), c(s, 0.0)],
        vec![c(s, 0.0), c(-s, 0.0)],
        vec![c(s, 0.0), c(0.0, s)],
        vec![c(s, 0.0), c(0.0, -s)],
    ]
}

pub fn standard_input_densities() -> Vec<CMatrix> {
    standard_inputs().iter().map(|v| CMatrix::outer(v)).collect()
}

/// exp(−iθσ) = cos θ·I − i sin θ·σ for a Pauli matrix σ.
pub fn pauli_rotation(sigma: &CMatrix, theta: f64) -> CMatrix {
    let mut u = CMatrix::identity(2).scale_real(theta.cos());
    u.axpy(c(0.0, -theta.sin()), sigma);
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GateSet {
    /// {I, exp(−iπσy/4), exp(−iπσx/4)}: measures along z, x and y.
    #[default]
    HalfPi,
    /// {I, exp(−iπσy/2), exp(−iπσx/2)}: all three measure along z.
    Pi,
}

impl GateSet {
    pub fn unitaries(&self) -> Vec<CMatrix> {
        let angle = match self {
            GateSet::HalfPi => std::f64::consts::FRAC_PI_4,
            GateSet::Pi => std::f64::consts::FRAC_PI_2,
        };
        vec![CMatrix::identity(2), pauli_rotation(&sigma_y(), angle), pauli_rotation(&sigma_x(), angle)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ResetMode {
    /// Drive off for `duration` (default 8/κ).
    FreeDecay { duration: Option<f64> },
    /// Cavity replaced by vacuum, qubit marginal kept.
    ProjectiveVacuum,
}

impl Default for ResetMode {
    fn default() -> Self {
        ResetMode::FreeDecay { duration: None }
    }
}

impl ResetMode {
    pub fn duration(&self, kappa: f64) -> f64 {
        match self {
            ResetMode::FreeDecay { duration } => duration.unwrap_or(8.0 / kappa),
            ResetMode::ProjectiveVacuum => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub gate_set: GateSet,
    pub reset: ResetMode,
    pub trajectories_per_cell: usize,
    pub bootstrap_resamples: usize,
    /// Unravel with state vectors (jumps for unmonitored channels) instead
    /// of density matrices.
    pub pure_state: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            gate_set: GateSet::HalfPi,
            reset: ResetMode::default(),
            trajectories_per_cell: 1000,
            bootstrap_resamples: 100,
            pure_state: true,
        }
    }
}

impl ProtocolConfig {
    pub fn inputs(&self) -> Vec<Vec<C64>> {
        standard_inputs()
    }

    pub fn gates(&self) -> Vec<CMatrix> {
        self.gate_set.unitaries()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories_per_cell == 0 {
            return Err(invalid("trajectories_per_cell must be positive"));
        }
        if let ResetMode::FreeDecay { duration: Some(d) } = self.reset {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(invalid(format!("reset duration must be non-negative, got {d}")));
            }
        }
        Ok(())
    }
}

/// Kraus operators {K_{n,r}} of an instrument on the qubit, grouped by
/// outcome n. Used as the mock measurement backend.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    pub dim: usize,
    pub outcomes: Vec<Vec<CMatrix>>,
}

impl KrausSet {
    pub fn new(outcomes: Vec<Vec<CMatrix>>) -> Result<Self> {
        let dim = outcomes
            .first()
            .and_then(|o| o.first())
            .map(|k| k.rows())
            .ok_or_else(|| invalid("empty Kraus set"))?;
        let mut total = CMatrix::zeros(dim, dim);
        for k in outcomes.iter().flatten() {
            if k.rows() != dim || k.cols() != dim {
                return Err(invalid("Kraus operators must share one square dimension"));
            }
            total.axpy(ONE, &k.dagger().matmul(k));
        }
        let dev = total.max_abs_diff(&CMatrix::identity(dim));
        if dev > 1e-10 {
            return Err(invalid(format!("Kraus set is not trace preserving (deviation {dev:.2e})")));
        }
        Ok(KrausSet { dim, outcomes })
    }

    /// Projective measurement in the computational basis.
    pub fn ideal(dim: usize) -> Self {
        KrausSet::new((0..dim).map(|n| vec![CMatrix::unit(dim, n, n)]).collect()).unwrap()
    }

    /// K_{n0} = √(1−2ε)|n⟩⟨n|, K_{n1} = √ε σz.
    pub fn phase_flip(eps: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&eps) {
            return Err(invalid(format!("phase-flip ε must lie in [0, 1/2], got {eps}")));
        }
        let sz = crate::model::sigma_z(2);
        let outcomes = (0..2)
            .map(|n| {
                vec![CMatrix::unit(2, n, n).scale_real((1.0 - 2.0 * eps).sqrt()), sz.scale_real(eps.sqrt())]
            })
            .collect();
        KrausSet::new(outcomes)
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    /// E_n(ρ) = Σ_r K_{n,r} ρ K_{n,r}†
    pub fn apply(&self, n: usize, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for k in &self.outcomes[n] {
            out.axpy(ONE, &k.sandwich(rho));
        }
        out
    }

    /// Π_n = Σ_r K_{n,r}† K_{n,r}
    pub fn povm_elements(&self) -> Vec<CMatrix> {
        self.outcomes
            .iter()
            .map(|ks| {
                let mut p = CMatrix::zeros(self.dim, self.dim);
                for k in ks {
                    p.axpy(ONE, &k.dagger().matmul(k));
                }
                p
            })
            .collect()
    }
}

/// Source of readout outcomes.
#[derive(Debug, Clone)]
pub enum Backend {
    Sme { engine: Box<Engine>, disc: Discriminator },
    Mock(KrausSet),
}

impl Backend {
    pub fn label(&self) -> String {
        match self {
            Backend::Sme { engine, disc } => format!(
                "{}:{}",
                serde_json::to_value(engine.params().model).unwrap().as_str().unwrap_or("sme"),
                serde_json::to_value(disc.mode).unwrap().as_str().unwrap_or("")
            ),
            Backend::Mock(_) => "mock".into(),
        }
    }

    pub fn n_outcomes(&self) -> usize {
        match self {
            Backend::Sme { .. } => 2,
            Backend::Mock(k) => k.n_outcomes(),
        }
    }
}

/// Outcome of one two-readout shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shot {
    pub n: usize,
    pub m: usize,
    /// Integrated currents of both readouts (NaN for the mock backend).
    pub currents: [f64; 2],
    pub top_fock_population: f64,
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Replaces the cavity by vacuum, keeping the qubit.
///
/// A density matrix becomes ρ_q ⊗ |0⟩⟨0|. A state vector is unraveled with
/// the Kraus operators I ⊗ |0⟩⟨n|, which averages to the same map.
pub fn project_cavity_vacuum(
    state: QuantumState,
    qubit_dim: usize,
    fock_cutoff: usize,
    rng: &mut ChaCha8Rng,
) -> Result<QuantumState> {
    match state {
        QuantumState::Mixed(_) => {
            let rq = state.qubit_marginal(qubit_dim, fock_cutoff)?;
            let vac = CMatrix::unit(fock_cutoff, 0, 0);
            Ok(QuantumState::Mixed(crate::linalg::kron(&rq, &vac)))
        }
        QuantumState::Pure(psi) => {
            let weights: Vec<f64> = (0..fock_cutoff)
                .map(|n| (0..qubit_dim).map(|q| psi[q * fock_cutoff + n].norm_sqr()).sum())
                .collect();
            let n = sample_index(rng, &weights);
            let norm = weights[n].sqrt();
            let mut out = vec![ZERO; psi.len()];
            for q in 0..qubit_dim {
                out[q * fock_cutoff] = psi[q * fock_cutoff + n] / norm;
            }
            Ok(QuantumState::Pure(out))
        }
    }
}

/// Resets the cavity between the two readouts. Free decay of a state
/// vector is unraveled stochastically; a density matrix follows the
/// Lindblad evolution. Returns the new state and the peak top-Fock
/// population seen.
pub fn reset_cavity(
    state: QuantumState,
    mode: ResetMode,
    engine: &Engine,
    rng: &mut ChaCha8Rng,
) -> Result<(QuantumState, f64)> {
    let p = engine.params();
    match mode {
        ResetMode::ProjectiveVacuum => Ok((project_cavity_vacuum(state, p.qubit_dim, p.fock_cutoff, rng)?, 0.0)),
        ResetMode::FreeDecay { .. } => {
            let duration = mode.duration(p.kappa);
            match state {
                QuantumState::Pure(_) => engine.free_evolution(state, duration, Some(rng)),
                QuantumState::Mixed(_) => engine.free_evolution(state, duration, None),
            }
        }
    }
}

/// U ⊕ I on a qudit whose two lowest levels form the qubit.
pub fn embed_qubit_operator(u: &CMatrix, qudit_dim: usize) -> CMatrix {
    CMatrix::from_fn(qudit_dim, qudit_dim, |r, c| {
        if r < 2 && c < 2 {
            u[(r, c)]
        } else if r == c {
            ONE
        } else {
            ZERO
        }
    })
}

/// Simulates one shot: readout, reset, gate U_j, readout.
pub fn run_shot(
    k: usize,
    j: usize,
    backend: &Backend,
    cfg: &ProtocolConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Shot> {
    let inputs = cfg.inputs();
    let gates = cfg.gates();
    if k >= inputs.len() || j >= gates.len() {
        return Err(invalid(format!("cell ({j}, {k}) out of range")));
    }
    match backend {
        Backend::Mock(kraus) => {
            let rho = CMatrix::outer(&inputs[k]);
            let post: Vec<CMatrix> = (0..kraus.n_outcomes()).map(|n| kraus.apply(n, &rho)).collect();
            let n = sample_index(rng, &post.iter().map(|r| r.trace().re.max(0.0)).collect::<Vec<_>>());
            let rho1 = post[n].scale_real(1.0 / post[n].trace().re);
            let rho2 = gates[j].sandwich(&rho1);
            let m = sample_index(
                rng,
                &(0..kraus.n_outcomes()).map(|m| kraus.apply(m, &rho2).trace().re.max(0.0)).collect::<Vec<_>>(),
            );
            Ok(Shot { n, m, currents: [f64::NAN; 2], top_fock_population: 0.0 })
        }
        Backend::Sme { engine, disc } => {
            let p = engine.params();
            let mut psi = inputs[k].clone();
            psi.resize(p.qubit_dim, ZERO);
            let mut state = QuantumState::product_vacuum(&psi, p.fock_cutoff);
            if !cfg.pure_state {
                state = state.into_mixed();
            }
            let first = engine.simulate_trajectory(state, disc, rng)?;
            let (mut state, top_reset) = reset_cavity(first.final_state, cfg.reset, engine, rng)?;
            state.apply_qubit_unitary(&embed_qubit_operator(&gates[j], p.qubit_dim), p.fock_cutoff);
            let second = engine.simulate_trajectory(state, disc, rng)?;
            Ok(Shot {
                n: first.outcome,
                m: second.outcome,
                currents: [first.integrated_current, second.integrated_current],
                top_fock_population: first.top_fock_population.max(second.top_fock_population).max(top_reset),
            })
        }
    }
}

/// Provenance carried by a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub backend: String,
    pub params: Option<SimParams>,
    pub protocol: ProtocolConfig,
    pub seed: u64,
    pub truncation_warnings: usize,
    pub max_top_fock_population: f64,
}

impl DatasetMeta {
    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let mut m = self.clone();
        m.truncation_warnings = 0;
        m.max_top_fock_population = 0.0;
        let bytes = serde_json::to_vec(&m).expect("meta serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Count tables of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotDataset {
    pub n_outcomes: usize,
    pub n_inputs: usize,
    pub n_gates: usize,
    /// counts1[n][k], first outcomes aggregated over gates.
    counts1: Vec<u64>,
    /// counts2[m][n][j][k]
    counts2: Vec<u64>,
    /// Integrated currents (first, second) per shot, ordered by cell (k, j)
    /// then trajectory index.
    pub currents: Vec<[f64; 2]>,
    pub meta: DatasetMeta,
}

impl ShotDataset {
    pub fn empty(n_outcomes: usize, n_inputs: usize, n_gates: usize, meta: DatasetMeta) -> Self {
        ShotDataset {
            n_outcomes,
            n_inputs,
            n_gates,
            counts1: vec![0; n_outcomes * n_inputs],
            counts2: vec![0; n_outcomes * n_outcomes * n_gates * n_inputs],
            currents: Vec::new(),
            meta,
        }
    }

    #[inline]
    fn i1(&self, n: usize, k: usize) -> usize {
        n * self.n_inputs + k
    }

    #[inline]
    fn i2(&self, m: usize, n: usize, j: usize, k: usize) -> usize {
        ((m * self.n_outcomes + n) * self.n_gates + j) * self.n_inputs + k
    }

    pub fn counts1(&self, n: usize, k: usize) -> u64 {
        self.counts1[self.i1(n, k)]
    }

    pub fn counts2(&self, m: usize, n: usize, j: usize, k: usize) -> u64 {
        self.counts2[self.i2(m, n, j, k)]
    }

    /// Records one shot; counts1 is kept as the marginal of counts2.
    pub fn add(&mut self, k: usize, j: usize, n: usize, m: usize) {
        let a = self.i1(n, k);
        let b = self.i2(m, n, j, k);
        self.counts1[a] += 1;
        self.counts2[b] += 1;
    }

    /// Σ_n counts1[n][k]
    pub fn first_total(&self, k: usize) -> u64 {
        (0..self.n_outcomes).map(|n| self.counts1(n, k)).sum()
    }

    /// N_jk = Σ_{m,n} counts2[m][n][j][k]
    pub fn cell_total(&self, j: usize, k: usize) -> u64 {
        let no = self.n_outcomes;
        (0..no).flat_map(|m| (0..no).map(move |n| (m, n))).map(|(m, n)| self.counts2(m, n, j, k)).sum()
    }

    pub fn total_shots(&self) -> u64 {
        self.counts2.iter().sum()
    }

    /// Checks that counts1 is the gate-aggregated marginal of counts2.
    pub fn check_consistency(&self) -> Result<()> {
        for n in 0..self.n_outcomes {
            for k in 0..self.n_inputs {
                let marg: u64 = (0..self.n_outcomes)
                    .flat_map(|m| (0..self.n_gates).map(move |j| (m, j)))
                    .map(|(m, j)| self.counts2(m, n, j, k))
                    .sum();
                if marg != self.counts1(n, k) {
                    return Err(Error::Schema(format!(
                        "counts1[{n}][{k}] = {} but counts2 marginal is {marg}",
                        self.counts1(n, k)
                    )));
                }
            }
        }
        Ok(())
    }

    /// χ² statistic and degrees of freedom for independence of the first
    /// outcome from the gate index, summed over inputs.
    pub fn gate_independence_chi2(&self) -> (f64, usize) {
        let mut chi2 = 0.0;
        let mut dof = 0;
        for k in 0..self.n_inputs {
            let total = self.first_total(k) as f64;
            if total == 0.0 {
                continue;
            }
            let mut used = false;
            for n in 0..self.n_outcomes {
                let row: f64 = self.counts1(n, k) as f64;
                if row == 0.0 {
                    continue;
                }
                for j in 0..self.n_gates {
                    let col = self.cell_total(j, k) as f64;
                    let obs: f64 = (0..self.n_outcomes).map(|m| self.counts2(m, n, j, k) as f64).sum();
                    let exp = row * col / total;
                    if exp > 0.0 {
                        chi2 += (obs - exp).powi(2) / exp;
                        used = true;
                    }
                }
            }
            if used {
                let rows = (0..self.n_outcomes).filter(|&n| self.counts1(n, k) > 0).count();
                dof += (rows.saturating_sub(1)) * (self.n_gates - 1);
            }
        }
        (chi2, dof)
    }

    fn rebuild_counts1(&mut self) {
        let mut c1 = vec![0u64; self.counts1.len()];
        for m in 0..self.n_outcomes {
            for n in 0..self.n_outcomes {
                for j in 0..self.n_gates {
                    for k in 0..self.n_inputs {
                        c1[n * self.n_inputs + k] += self.counts2(m, n, j, k);
                    }
                }
            }
        }
        self.counts1 = c1;
    }
}

/// Runs every (input, gate) cell for `cfg.trajectories_per_cell` shots.
///
/// Shot t of cell (k, j) draws from stream `((k·n_gates + j) << 32) | t` of
/// the seed, so the result does not depend on the thread count.
pub fn run_campaign(
    backend: &Backend,
    params: Option<&SimParams>,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<ShotDataset> {
    cfg.validate()?;
    let n_inputs = cfg.inputs().len();
    let n_gates = cfg.gates().len();
    let nt = cfg.trajectories_per_cell;
    let total = n_inputs * n_gates * nt;
    let shots: Vec<Shot> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let cell = idx / nt;
            let t = idx % nt;
            let (k, j) = (cell / n_gates, cell % n_gates);
            let mut rng = trajectory_rng(seed, ((cell as u64) << 32) | t as u64);
            run_shot(k, j, backend, cfg, &mut rng).map_err(|e| match e {
                Error::NumericalFailure(msg) => {
                    Error::NumericalFailure(format!("cell (k={k}, j={j}) shot {t}: {msg}"))
                }
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    let meta = DatasetMeta {
        backend: backend.label(),
        params: params.cloned(),
        protocol: cfg.clone(),
        seed,
        truncation_warnings: shots
            .iter()
            .filter(|s| s.top_fock_population > crate::sme::TRUNCATION_WARNING_LEVEL)
            .count(),
        max_top_fock_population: shots.iter().map(|s| s.top_fock_population).fold(0.0, f64::max),
    };
    let mut ds = ShotDataset::empty(backend.n_outcomes(), n_inputs, n_gates, meta);
    for (idx, s) in shots.iter().enumerate() {
        let cell = idx / nt;
        ds.add(cell / n_gates, cell % n_gates, s.n, s.m);
    }
    if matches!(backend, Backend::Sme { .. }) {
        ds.currents = shots.iter().map(|s| s.currents).collect();
    }
    Ok(ds)
}

/// Conditional distributions p̂(n|k) and p̂(mn|jk).
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    pub n_outcomes: usize,
    pub n_inputs: usize,
    pub n_gates: usize,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl Probabilities {
    pub fn from_fn(
        n_outcomes: usize,
        n_inputs: usize,
        n_gates: usize,
        f1: impl Fn(usize, usize) -> f64,
        f2: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut p1 = Vec::with_capacity(n_outcomes * n_inputs);
        for n in 0..n_outcomes {
            for k in 0..n_inputs {
                p1.push(f1(n, k));
            }
        }
        let mut p2 = Vec::with_capacity(n_outcomes * n_outcomes * n_gates * n_inputs);
        for m in 0..n_outcomes {
            for n in 0..n_outcomes {
                for j in 0..n_gates {
                    for k in 0..n_inputs {
                        p2.push(f2(m, n, j, k));
                    }
                }
            }
        }
        Probabilities { n_outcomes, n_inputs, n_gates, p1, p2 }
    }

    /// p̂(n|k)
    pub fn p1(&self, n: usize, k: usize) -> f64 {
        self.p1[n * self.n_inputs + k]
    }

    /// p̂(mn|jk)
    pub fn p2(&self, m: usize, n: usize, j: usize, k: usize) -> f64 {
        self.p2[((m * self.n_outcomes + n) * self.n_gates + j) * self.n_inputs + k]
    }
}

pub fn empirical_probabilities(ds: &ShotDataset) -> Result<Probabilities> {
    for k in 0..ds.n_inputs {
        if ds.first_total(k) == 0 {
            return Err(invalid(format!("input {k} has no shots")));
        }
        for j in 0..ds.n_gates {
            if ds.cell_total(j, k) == 0 {
                return Err(invalid(format!("cell (j={j}, k={k}) has no shots")));
            }
        }
    }
    Ok(Probabilities::from_fn(
        ds.n_outcomes,
        ds.n_inputs,
        ds.n_gates,
        |n, k| ds.counts1(n, k) as f64 / ds.first_total(k) as f64,
        |m, n, j, k| ds.counts2(m, n, j, k) as f64 / ds.cell_total(j, k) as f64,
    ))
}

/// Exact outcome distributions of a Kraus instrument on the given inputs
/// and gates.
pub fn exact_probabilities(kraus: &KrausSet, inputs: &[CMatrix], gates: &[CMatrix]) -> Probabilities {
    let no = kraus.n_outcomes();
    let povm = kraus.povm_elements();
    Probabilities::from_fn(
        no,
        inputs.len(),
        gates.len(),
        |n, k| povm[n].trace_product(&inputs[k]).re,
        |m, n, j, k| {
            let post = gates[j].sandwich(&kraus.apply(n, &inputs[k]));
            povm[m].trace_product(&post).re
        },
    )
}

/// Draws a multinomial sample of size `n` by sequential binomials.
fn multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i == probs.len() - 1 {
            out[i] = left;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[i] = draw;
        left -= draw;
        mass -= p;
    }
    out
}

/// `b` multinomial resamples of every (j, k) cell of counts2, each with the
/// cell's original size; counts1 is re-derived as the marginal. Resample r
/// uses stream r of `seed`.
pub fn bootstrap_resample(ds: &ShotDataset, b: usize, seed: u64) -> Result<Vec<ShotDataset>> {
    if b == 0 {
        return Err(invalid("bootstrap needs at least one resample"));
    }
    let no = ds.n_outcomes;
    Ok((0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = trajectory_rng(seed, r as u64);
            let mut out = ds.clone();
            out.currents.clear();
            for j in 0..ds.n_gates {
                for k in 0..ds.n_inputs {
                    let total = ds.cell_total(j, k);
                    if total == 0 {
                        continue;
                    }
                    let cells: Vec<(usize, usize)> = (0..no).flat_map(|m| (0..no).map(move |n| (m, n))).collect();
                    let probs: Vec<f64> =
                        cells.iter().map(|&(m, n)| ds.counts2(m, n, j, k) as f64 / total as f64).collect();
                    let draw = multinomial(&mut rng, total, &probs);
                    for (&(m, n), &cnt) in cells.iter().zip(&draw) {
                        let i = out.i2(m, n, j, k);
                        out.counts2[i] = cnt;
                    }
                }
            }
            out.rebuild_counts1();
            out
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    meta: DatasetMeta,
    config_hash: String,
    n_outcomes: usize,
    n_inputs: usize,
    n_gates: usize,
    total_shots: u64,
}

impl ShotDataset {
    /// Writes the dataset: magic line, JSON header line, then CSV blocks
    /// `[counts1]`, `[counts2]`, `[currents]` and the `[end]` marker.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DatasetHeader {
            meta: self.meta.clone(),
            config_hash: self.meta.config_hash(),
            n_outcomes: self.n_outcomes,
            n_inputs: self.n_inputs,
            n_gates: self.n_gates,
            total_shots: self.total_shots(),
        };
        writeln!(w, "{DATASET_MAGIC}")?;
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        writeln!(w, "[counts1]")?;
        writeln!(w, "n,k,count")?;
        for n in 0..self.n_outcomes {
            for k in 0..self.n_inputs {
                writeln!(w, "{n},{k},{}", self.counts1(n, k))?;
            }
        }
        writeln!(w, "[counts2]")?;
        writeln!(w, "m,n,j,k,count")?;
        for m in 0..self.n_outcomes {
            for n in 0..self.n_outcomes {
                for j in 0..self.n_gates {
                    for k in 0..self.n_inputs {
                        writeln!(w, "{m},{n},{j},{k},{}", self.counts2(m, n, j, k))?;
                    }
                }
            }
        }
        writeln!(w, "[currents]")?;
        writeln!(w, "shot,j1,j2")?;
        for (i, cur) in self.currents.iter().enumerate() {
            writeln!(w, "{i},{:.12e},{:.12e}", cur[0], cur[1])?;
        }
        writeln!(w, "[end]")?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let schema = |line: usize, msg: &str| Error::Schema(format!("line {line}: {msg}"));
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i, l)),
                Some((i, Err(e))) => Err(Error::Schema(format!("line {i}: {e}"))),
                None => Err(Error::Schema(format!("unexpected end of file, expected {what}"))),
            }
        };
        let (i, magic) = next("magic line")?;
        if magic.trim() != DATASET_MAGIC {
            return Err(schema(i, "not a dataset file"));
        }
        let (i, head) = next("JSON header")?;
        let header: DatasetHeader =
            serde_json::from_str(&head).map_err(|e| schema(i, &format!("bad header: {e}")))?;
        let mut ds = ShotDataset::empty(header.n_outcomes, header.n_inputs, header.n_gates, header.meta);

        let expect = |got: (usize, String), want: &str| -> Result<()> {
            if got.1.trim() != want {
                return Err(schema(got.0, &format!("expected '{want}', found '{}'", got.1)));
            }
            Ok(())
        };
        let parse_u = |i: usize, s: &str| -> Result<u64> {
            s.trim().parse::<u64>().map_err(|_| schema(i, &format!("bad integer '{s}'")))
        };

        expect(next("[counts1]")?, "[counts1]")?;
        expect(next("counts1 columns")?, "n,k,count")?;
        for _ in 0..ds.n_outcomes * ds.n_inputs {
            let (i, l) = next("counts1 row")?;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(schema(i, "counts1 rows have 3 fields"));
            }
            let (n, k) = (parse_u(i, f[0])? as usize, parse_u(i, f[1])? as usize);
            if n >= ds.n_outcomes || k >= ds.n_inputs {
                return Err(schema(i, "counts1 index out of range"));
            }
            let idx = ds.i1(n, k);
            ds.counts1[idx] = parse_u(i, f[2])?;
        }
        expect(next("[counts2]")?, "[counts2]")?;
        expect(next("counts2 columns")?, "m,n,j,k,count")?;
        for _ in 0..ds.counts2.len() {
            let (i, l) = next("counts2 row")?;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(schema(i, "counts2 rows have 5 fields"));
            }
            let idx: Vec<usize> = f[..4].iter().map(|s| parse_u(i, s).map(|v| v as usize)).collect::<Result<_>>()?;
            if idx[0] >= ds.n_outcomes || idx[1] >= ds.n_outcomes || idx[2] >= ds.n_gates || idx[3] >= ds.n_inputs {
                return Err(schema(i, "counts2 index out of range"));
            }
            let at = ds.i2(idx[0], idx[1], idx[2], idx[3]);
            ds.counts2[at] = parse_u(i, f[4])?;
        }
        expect(next("[currents]")?, "[currents]")?;
        expect(next("currents columns")?, "shot,j1,j2")?;
        loop {
            let (i, l) = next("[end]")?;
            if l.trim() == "[end]" {
                break;
            }
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(schema(i, "currents rows have 3 fields"));
            }
            let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|_| schema(i, &format!("bad number '{s}'")));
            ds.currents.push([parse_f(f[1])?, parse_f(f[2])?]);
        }
        if ds.total_shots() != header.total_shots {
            return Err(Error::Schema(format!(
                "header declares {} shots but counts2 holds {}",
                header.total_shots,
                ds.total_shots()
            )));
        }
        if ds.meta.config_hash() != header.config_hash {
            return Err(Error::Schema("config hash does not match the header metadata".into()));
        }
        ds.check_consistency()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::sme::{calibrate_discriminator, DiscriminatorMode};

    fn mock_cfg(nt: usize) -> ProtocolConfig {
        ProtocolConfig { trajectories_per_cell: nt, ..Default::default() }
    }

    #[test]
    fn inputs_are_normalized_and_gates_unitary() {
        for v in standard_inputs() {
            let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-15);
        }
        for set in [GateSet::HalfPi, GateSet::Pi] {
            for u in set.unitaries() {
                assert!(u.dagger().matmul(&u).max_abs_diff(&CMatrix::identity(2)) < 1e-12);
            }
        }
        // R_y(π/2) maps |g⟩ to an equal superposition
        let u = GateSet::HalfPi.unitaries()[1].clone();
        let out = u.matvec(&[ONE, ZERO]);
        assert!((out[0].norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ideal_mock_shot_on_ground_state() {
        let backend = Backend::Mock(KrausSet::ideal(2));
        let cfg = mock_cfg(1);
        for s in 0..50 {
            let shot = run_shot(0, 0, &backend, &cfg, &mut trajectory_rng(1, s)).unwrap();
            assert_eq!((shot.n, shot.m), (0, 0));
        }
    }

    #[test]
    fn ideal_mock_rotated_eigenstate_is_uniform() {
        let backend = Backend::Mock(KrausSet::ideal(2));
        let cfg = mock_cfg(1);
        let n = 1000;
        let mut e = 0;
        for s in 0..n {
            let shot = run_shot(1, 2, &backend, &cfg, &mut trajectory_rng(2, s)).unwrap();
            assert_eq!(shot.n, 1);
            e += shot.m;
        }
        let p = e as f64 / n as f64;
        assert!((p - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "p = {p}");
    }

    #[test]
    fn campaign_bookkeeping_and_determinism() {
        let backend = Backend::Mock(KrausSet::phase_flip(0.1).unwrap());
        let cfg = mock_cfg(10);
        let ds = run_campaign(&backend, None, &cfg, 5).unwrap();
        assert_eq!(ds.total_shots(), 180);
        for k in 0..6 {
            assert_eq!(ds.first_total(k), 30);
            for j in 0..3 {
                assert_eq!(ds.cell_total(j, k), 10);
            }
        }
        ds.check_consistency().unwrap();
        assert_eq!(ds, run_campaign(&backend, None, &cfg, 5).unwrap());
        let ideal = run_campaign(&Backend::Mock(KrausSet::ideal(2)), None, &cfg, 5).unwrap();
        let p = empirical_probabilities(&ideal).unwrap();
        assert_eq!(p.p1(0, 0), 1.0);
    }

    #[test]
    fn campaign_independent_of_thread_count() {
        let backend = Backend::Mock(KrausSet::phase_flip(0.2).unwrap());
        let cfg = mock_cfg(40);
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| {
            run_campaign(&backend, None, &cfg, 9).unwrap()
        });
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| {
            run_campaign(&backend, None, &cfg, 9).unwrap()
        });
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_probabilities_are_normalized() {
        let ds = run_campaign(&Backend::Mock(KrausSet::phase_flip(0.3).unwrap()), None, &mock_cfg(17), 1).unwrap();
        let p = empirical_probabilities(&ds).unwrap();
        for k in 0..6 {
            let s: f64 = (0..2).map(|n| p.p1(n, k)).sum();
            assert!((s - 1.0).abs() < 1e-12);
            for j in 0..3 {
                let s: f64 = (0..2).flat_map(|m| (0..2).map(move |n| (m, n))).map(|(m, n)| p.p2(m, n, j, k)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let empty = ShotDataset::empty(2, 6, 3, ds.meta.clone());
        assert!(matches!(empirical_probabilities(&empty), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bootstrap_of_delta_distribution_is_identity() {
        let ds = run_campaign(&Backend::Mock(KrausSet::ideal(2)), None, &mock_cfg(5), 3).unwrap();
        // inputs 0 and 1 with gate 0 are deterministic cells
        let rs = bootstrap_resample(&ds, 1, 0).unwrap();
        for j in [0] {
            for k in [0, 1] {
                for m in 0..2 {
                    for n in 0..2 {
                        assert_eq!(rs[0].counts2(m, n, j, k), ds.counts2(m, n, j, k));
                    }
                }
            }
        }
        rs[0].check_consistency().unwrap();
    }

    #[test]
    fn bootstrap_mean_and_binomial_spread() {
        let mut ds = ShotDataset::empty(2, 1, 1, run_campaign(&Backend::Mock(KrausSet::ideal(2)), None, &mock_cfg(1), 0).unwrap().meta);
        // p(n=1) = 0.3 over N = 400 shots, second outcome copies the first
        for t in 0..400 {
            let n = usize::from(t < 120);
            ds.add(0, 0, n, n);
        }
        let b = 1000;
        let rs = bootstrap_resample(&ds, b, 42).unwrap();
        let ps: Vec<f64> = rs.iter().map(|r| r.counts1(1, 0) as f64 / 400.0).collect();
        let mean = ps.iter().sum::<f64>() / b as f64;
        let var = ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
        let expected_sd = (0.3f64 * 0.7 / 400.0).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * expected_sd / (b as f64).sqrt());
        assert!((var.sqrt() / expected_sd - 1.0).abs() < 0.1, "sd ratio {}", var.sqrt() / expected_sd);
        for r in &rs {
            r.check_consistency().unwrap();
            assert_eq!(r.cell_total(0, 0), 400);
        }
    }

    #[test]
    fn multinomial_expectation_matches_source() {
        let mut rng = trajectory_rng(4, 0);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let n = 200u64;
        let reps = 2000;
        let mut sums = [0f64; 4];
        for _ in 0..reps {
            let d = multinomial(&mut rng, n, &probs);
            assert_eq!(d.iter().sum::<u64>(), n);
            for i in 0..4 {
                sums[i] += d[i] as f64 / n as f64;
            }
        }
        for i in 0..4 {
            let mean = sums[i] / reps as f64;
            let se = (probs[i] * (1.0 - probs[i]) / n as f64 / reps as f64).sqrt();
            assert!((mean - probs[i]).abs() < 3.5 * se);
        }
    }

    #[test]
    fn projective_reset_on_product_state() {
        let p = SimParams { model: ModelKind::Dispersive, fock_cutoff: 4, ..Default::default() };
        let rq = CMatrix::from_vec(2, 2, vec![c(0.7, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(0.3, 0.0)]).unwrap();
        let rc = CMatrix::from_diag(&[c(0.5, 0.0), c(0.3, 0.0), c(0.2, 0.0), ZERO]);
        let state = QuantumState::Mixed(crate::linalg::kron(&rq, &rc));
        let out = project_cavity_vacuum(state, 2, p.fock_cutoff, &mut trajectory_rng(0, 0)).unwrap();
        let expected = crate::linalg::kron(&rq, &CMatrix::unit(4, 0, 0));
        assert!(out.to_density().max_abs_diff(&expected) < 1e-15);
        assert!(out.qubit_marginal(2, 4).unwrap().max_abs_diff(&rq) < 1e-15);
    }

    #[test]
    fn dataset_file_round_trip_and_truncation() {
        let ds = run_campaign(&Backend::Mock(KrausSet::phase_flip(0.1).unwrap()), None, &mock_cfg(10), 5).unwrap();
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        let back = ShotDataset::read(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, ds);
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(ShotDataset::read(std::io::Cursor::new(cut)), Err(Error::Schema(_))));
    }

    #[test]
    fn sme_shot_on_readout_backend() {
        let p = SimParams {
            model: ModelKind::Dispersive,
            delta: 5.0,
            gamma: 0.0,
            gamma_phi: 0.0,
            omega_c: 0.2,
            t_meas: 20.0,
            fock_cutoff: 6,
            ..Default::default()
        };
        let engine = Engine::new(&p).unwrap();
        let disc = calibrate_discriminator(&engine, DiscriminatorMode::Calibrated, true).unwrap();
        let backend = Backend::Sme { engine: Box::new(engine), disc };
        let cfg = ProtocolConfig { trajectories_per_cell: 4, ..Default::default() };
        let mut seen = std::collections::HashSet::new();
        for s in 0..40 {
            let shot = run_shot(2, 1, &backend, &cfg, &mut trajectory_rng(8, s)).unwrap();
            seen.insert((shot.n, shot.m));
            assert!(shot.currents[0].is_finite());
        }
        // |+⟩ input, R_y gate: both first outcomes and e-then-g records occur
        assert!(seen.contains(&(1, 0)));
        assert!(seen.contains(&(0, 0)) || seen.contains(&(0, 1)));
    }
}
