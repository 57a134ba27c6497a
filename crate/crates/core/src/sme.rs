//! Homodyne-monitored trajectories of the qubit⊗cavity system.
//!
//! One integrator step from t to t + dt applies, in order,
//!
//! 1. the measurement/dissipation Kraus map
//!    `K = 1 − ½Σ L†L dt + √κ a dy + ½κ a² (dy² − dt)` with the record
//!    increment `dy = √κ⟨a + a†⟩ dt + dW`, plus `dt·γ_k L_k ρ L_k†` for the
//!    unmonitored channels,
//! 2. the coherent propagator `U = exp(−iH dt)`,
//! 3. renormalization.
//!
//! The map is completely positive, so the conditioned state stays PSD to
//! round-off. Pure states are unraveled with the same `K` for the monitored
//! cavity output and with quantum jumps for the unmonitored qubit channels.

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, hermitian_eig, CMatrix, SparseMatrix, C64, ONE, ZERO};
use crate::model::{collapse_operators, hamiltonian_with_drive, Operators, SimParams};

/// Entries of precomputed operators below this modulus are dropped.
const SPARSE_DROP: f64 = 1e-15;
/// Populations of the top Fock level above this mark the record as
/// truncation-limited.
pub const TRUNCATION_WARNING_LEVEL: f64 = 1e-2;

/// Conditioned state of the composite system.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(Vec<C64>),
    Mixed(CMatrix),
}

impl QuantumState {
    /// ψ_q ⊗ |0⟩ for a qubit state ψ_q.
    pub fn product_vacuum(qubit: &[C64], fock_cutoff: usize) -> Self {
        let mut v = vec![ZERO; qubit.len() * fock_cutoff];
        for (q, &amp) in qubit.iter().enumerate() {
            v[q * fock_cutoff] = amp;
        }
        QuantumState::Pure(v)
    }

    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(v) => v.len(),
            QuantumState::Mixed(m) => m.rows(),
        }
    }

    pub fn to_density(&self) -> CMatrix {
        match self {
            QuantumState::Pure(v) => CMatrix::outer(v),
            QuantumState::Mixed(m) => m.clone(),
        }
    }

    pub fn into_mixed(self) -> Self {
        QuantumState::Mixed(self.to_density())
    }

    pub fn expect(&self, op: &CMatrix) -> C64 {
        match self {
            QuantumState::Pure(v) => {
                let w = op.matvec(v);
                v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum()
            }
            QuantumState::Mixed(m) => op.trace_product(m),
        }
    }

    /// Applies `op ⊗ I_cavity` (e.g. a qubit gate) in place.
    pub fn apply_qubit_unitary(&mut self, u: &CMatrix, fock_cutoff: usize) {
        let lifted = crate::linalg::kron(u, &CMatrix::identity(fock_cutoff));
        match self {
            QuantumState::Pure(v) => *v = lifted.matvec(v),
            QuantumState::Mixed(m) => *m = lifted.sandwich(m),
        }
    }

    /// Reduced qubit density matrix.
    pub fn qubit_marginal(&self, qubit_dim: usize, fock_cutoff: usize) -> Result<CMatrix> {
        crate::linalg::partial_trace(
            &self.to_density(),
            (qubit_dim, fock_cutoff),
            crate::linalg::Subsystem::A,
        )
    }
}

/// Deterministic per-trajectory random stream.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// K = base + c1·a + c2·a² on a fixed sparsity pattern.
#[derive(Debug, Clone)]
struct KrausTemplate {
    pattern: SparseMatrix,
    base: Vec<C64>,
    a_part: Vec<C64>,
    a2_part: Vec<C64>,
}

impl KrausTemplate {
    fn new(base: &CMatrix, a: &CMatrix, a2: &CMatrix) -> Self {
        let n = base.rows();
        let union = CMatrix::from_fn(n, n, |i, j| {
            let any = base[(i, j)] != ZERO || a[(i, j)] != ZERO || a2[(i, j)] != ZERO;
            if any {
                ONE
            } else {
                ZERO
            }
        });
        let pattern = SparseMatrix::from_dense(&union, 0.5);
        let dense = pattern.to_dense();
        let mut base_v = Vec::new();
        let mut a_v = Vec::new();
        let mut a2_v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if dense[(i, j)] != ZERO {
                    base_v.push(base[(i, j)]);
                    a_v.push(a[(i, j)]);
                    a2_v.push(a2[(i, j)]);
                }
            }
        }
        KrausTemplate { pattern, base: base_v, a_part: a_v, a2_part: a2_v }
    }

    fn fill(&self, out: &mut SparseMatrix, c1: f64, c2: f64) {
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            *v = self.base[k] + self.a_part[k] * c1 + self.a2_part[k] * c2;
        }
    }
}

/// Precomputed operators for one parameter set.
#[derive(Debug, Clone)]
pub struct Engine {
    params: SimParams,
    dim: usize,
    kappa: f64,
    dt: f64,
    steps: usize,
    x: SparseMatrix,
    a: SparseMatrix,
    kraus: KrausTemplate,
    /// Unmonitored channels (rate, L).
    jumps: Vec<(f64, SparseMatrix)>,
    top_fock: Vec<usize>,
    /// Propagators over one step, indexed by drive amplitude.
    props: Vec<(f64, SparseMatrix)>,
    /// Propagator index for each measurement step.
    schedule: Vec<usize>,
    idle: usize,
}

fn diagonal_decay(p: &SimParams) -> Result<Vec<f64>> {
    let n = p.dim();
    let mut total = CMatrix::zeros(n, n);
    for col in collapse_operators(p) {
        total.axpy(c(col.rate, 0.0), &col.op.dagger().matmul(&col.op));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && total[(i, j)].norm() > 1e-14 {
                return Err(Error::NumericalFailure(
                    "collapse operators with non-diagonal L†L are not supported".into(),
                ));
            }
        }
    }
    Ok(total.diag().iter().map(|z| z.re).collect())
}

impl Engine {
    pub fn new(p: &SimParams) -> Result<Self> {
        p.validate()?;
        let steps = p.steps_for(p.t_meas);
        let dt = p.t_meas / steps as f64;
        let ops = Operators::for_params(p);
        let n = ops.dim();
        let a2 = ops.a.matmul(&ops.a);
        let decay = diagonal_decay(p)?;
        let base = CMatrix::from_diag(&decay.iter().map(|&g| c(1.0 - 0.5 * g * dt, 0.0)).collect::<Vec<_>>());
        let kraus = KrausTemplate::new(&base, &ops.a, &a2);
        let jumps = collapse_operators(p)
            .into_iter()
            .filter(|col| !col.monitored)
            .map(|col| (col.rate, SparseMatrix::from_dense(&col.op, SPARSE_DROP)))
            .collect();
        let top_fock = (0..p.qubit_dim).map(|q| q * p.fock_cutoff + p.fock_cutoff - 1).collect();

        let mut amplitudes: Vec<f64> = vec![0.0];
        let mut schedule = Vec::with_capacity(steps);
        for i in 0..steps {
            let om = p.drive_at(i as f64 * dt);
            let idx = match amplitudes.iter().position(|&x| x == om) {
                Some(k) => k,
                None => {
                    amplitudes.push(om);
                    amplitudes.len() - 1
                }
            };
            schedule.push(idx);
        }
        let mut props = Vec::with_capacity(amplitudes.len());
        for &om in &amplitudes {
            let h = hamiltonian_with_drive(p, om)?;
            let eig = hermitian_eig(&h)?;
            let u = eig.reconstruct_with(|l| C64::from_polar(1.0, -l * dt));
            props.push((om, SparseMatrix::from_dense(&u, SPARSE_DROP)));
        }
        let _ = n;
        Ok(Engine {
            params: p.clone(),
            dim: ops.dim(),
            kappa: p.kappa,
            dt,
            steps,
            x: SparseMatrix::from_dense(&ops.quadrature(), SPARSE_DROP),
            a: SparseMatrix::from_dense(&ops.a, SPARSE_DROP),
            kraus,
            jumps,
            top_fock,
            props,
            schedule,
            idle: 0,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct propagators (one per drive amplitude).
    pub fn propagator_count(&self) -> usize {
        self.props.len()
    }

    fn new_kraus(&self) -> SparseMatrix {
        self.kraus.pattern.clone()
    }

    fn top_population_pure(&self, psi: &[C64]) -> f64 {
        self.top_fock.iter().map(|&i| psi[i].norm_sqr()).sum()
    }

    fn top_population_mixed(&self, rho: &CMatrix) -> f64 {
        self.top_fock.iter().map(|&i| rho[(i, i)].re).sum()
    }

    /// √κ⟨a + a†⟩
    pub fn signal_of(&self, state: &QuantumState) -> f64 {
        let x = match state {
            QuantumState::Pure(v) => self.x.expectation(v).re,
            QuantumState::Mixed(m) => self.x.trace_with(m).re,
        };
        self.kappa.sqrt() * x
    }

    /// One stochastic step of a density matrix. Returns the signal
    /// √κ⟨a+a†⟩ evaluated before the step.
    fn mixed_step(&self, rho: &mut CMatrix, k: &mut SparseMatrix, u: &SparseMatrix, dw: f64) -> Result<f64> {
        let s = self.kappa.sqrt() * self.x.trace_with(rho).re;
        let dy = s * self.dt + dw;
        self.kraus.fill(k, self.kappa.sqrt() * dy, 0.5 * self.kappa * (dy * dy - self.dt));
        let mut next = k.sandwich(rho);
        for (rate, l) in &self.jumps {
            next.axpy(c(rate * self.dt, 0.0), &l.sandwich(rho));
        }
        *rho = u.sandwich(&next);
        normalize_mixed(rho)?;
        Ok(s)
    }

    /// One step of the unconditional (Lindblad) evolution, first order in dt.
    fn deterministic_step(&self, rho: &mut CMatrix, k: &mut SparseMatrix, u: &SparseMatrix) -> Result<f64> {
        let s = self.kappa.sqrt() * self.x.trace_with(rho).re;
        self.kraus.fill(k, 0.0, 0.0);
        let mut next = k.sandwich(rho);
        next.axpy(c(self.kappa * self.dt, 0.0), &self.a.sandwich(rho));
        for (rate, l) in &self.jumps {
            next.axpy(c(rate * self.dt, 0.0), &l.sandwich(rho));
        }
        *rho = u.sandwich(&next);
        normalize_mixed(rho)?;
        Ok(s)
    }

    /// One step of a pure state. Returns the pre-step signal.
    #[allow(clippy::too_many_arguments)]
    fn pure_step(
        &self,
        psi: &mut Vec<C64>,
        buf: &mut Vec<C64>,
        k: &mut SparseMatrix,
        u: &SparseMatrix,
        dw: f64,
        jump_draw: f64,
    ) -> Result<f64> {
        let s = self.kappa.sqrt() * self.x.expectation(psi).re;
        let mut jumped = false;
        if !self.jumps.is_empty() {
            let mut acc = 0.0;
            for (rate, l) in &self.jumps {
                l.apply_into(psi, buf);
                let w: f64 = buf.iter().map(|z| z.norm_sqr()).sum::<f64>() * rate * self.dt;
                acc += w;
                if jump_draw < acc {
                    std::mem::swap(psi, buf);
                    jumped = true;
                    break;
                }
            }
        }
        if !jumped {
            let dy = s * self.dt + dw;
            self.kraus.fill(k, self.kappa.sqrt() * dy, 0.5 * self.kappa * (dy * dy - self.dt));
            k.apply_into(psi, buf);
            std::mem::swap(psi, buf);
        }
        u.apply_into(psi, buf);
        std::mem::swap(psi, buf);
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::NumericalFailure(format!("state norm collapsed to {norm:e}")));
        }
        let inv = 1.0 / norm.sqrt();
        psi.iter_mut().for_each(|z| *z *= inv);
        Ok(s)
    }

    fn run(
        &self,
        state: QuantumState,
        steps: usize,
        driven: bool,
        mode: StepMode,
        rng: &mut ChaCha8Rng,
        mut on_step: impl FnMut(usize, f64, f64, f64),
    ) -> Result<QuantumState> {
        if state.dim() != self.dim {
            return Err(invalid(format!(
                "state dimension {} does not match engine dimension {}",
                state.dim(),
                self.dim
            )));
        }
        let sqdt = self.dt.sqrt();
        let mut k = self.new_kraus();
        let prop = |i: usize| {
            let idx = if driven { self.schedule[i.min(self.schedule.len() - 1)] } else { self.idle };
            &self.props[idx].1
        };
        match state {
            QuantumState::Pure(mut psi) => {
                if mode == StepMode::Deterministic {
                    return self.run(QuantumState::Mixed(CMatrix::outer(&psi)), steps, driven, mode, rng, on_step);
                }
                let mut buf = vec![ZERO; self.dim];
                for i in 0..steps {
                    let dw = sqdt * rng.sample::<f64, _>(StandardNormal);
                    let draw = if self.jumps.is_empty() { 1.0 } else { rng.random::<f64>() };
                    let top = self.top_population_pure(&psi);
                    let s = self.pure_step(&mut psi, &mut buf, &mut k, prop(i), dw, draw)?;
                    on_step(i, s, dw, top);
                }
                let s = self.kappa.sqrt() * self.x.expectation(&psi).re;
                on_step(steps, s, 0.0, self.top_population_pure(&psi));
                Ok(QuantumState::Pure(psi))
            }
            QuantumState::Mixed(mut rho) => {
                for i in 0..steps {
                    let top = self.top_population_mixed(&rho);
                    let (s, dw) = match mode {
                        StepMode::Stochastic => {
                            let dw = sqdt * rng.sample::<f64, _>(StandardNormal);
                            (self.mixed_step(&mut rho, &mut k, prop(i), dw)?, dw)
                        }
                        StepMode::Deterministic => (self.deterministic_step(&mut rho, &mut k, prop(i))?, 0.0),
                    };
                    on_step(i, s, dw, top);
                }
                let s = self.kappa.sqrt() * self.x.trace_with(&rho).re;
                on_step(steps, s, 0.0, self.top_population_mixed(&rho));
                Ok(QuantumState::Mixed(rho))
            }
        }
    }

    /// Simulates one readout pulse of duration T and discriminates it.
    pub fn simulate_trajectory(
        &self,
        state0: QuantumState,
        disc: &Discriminator,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrajectoryRecord> {
        let n = self.steps;
        let mut signal = vec![0.0; n + 1];
        let mut dw = vec![0.0; n];
        let mut top: f64 = 0.0;
        let final_state = self.run(state0, n, true, StepMode::Stochastic, rng, |i, s, w, t| {
            signal[i] = s;
            if i < n {
                dw[i] = w;
            }
            top = top.max(t);
        })?;
        let mut rec = TrajectoryRecord {
            dt: self.dt,
            signal,
            dw,
            integrated_current: 0.0,
            outcome: 0,
            final_state,
            top_fock_population: top,
            truncation_warning: top > TRUNCATION_WARNING_LEVEL,
        };
        rec.integrated_current = integrate_current(&rec, disc);
        rec.outcome = discriminate(rec.integrated_current, disc);
        Ok(rec)
    }

    /// Unconditional evolution over the readout pulse; returns the signal
    /// √κ⟨a+a†⟩ on the N+1 grid points and the final state.
    pub fn evolve_deterministic(&self, state0: QuantumState) -> Result<(Vec<f64>, QuantumState)> {
        let n = self.steps;
        let mut signal = vec![0.0; n + 1];
        let mut rng = trajectory_rng(0, 0);
        let out = self.run(state0, n, true, StepMode::Deterministic, &mut rng, |i, s, _, _| signal[i] = s)?;
        Ok((signal, out))
    }

    /// Evolution with the drive off for `duration`, using the measurement
    /// step size. Stochastic unraveling when `rng` is given, Lindblad
    /// evolution otherwise.
    pub fn free_evolution(
        &self,
        state: QuantumState,
        duration: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(QuantumState, f64)> {
        let steps = (duration / self.dt).round() as usize;
        let mut top: f64 = 0.0;
        let out = match rng {
            Some(r) => self.run(state, steps, false, StepMode::Stochastic, r, |_, _, _, t| top = top.max(t))?,
            None => {
                let mut r = trajectory_rng(0, 0);
                self.run(state, steps, false, StepMode::Deterministic, &mut r, |_, _, _, t| top = top.max(t))?
            }
        };
        Ok((out, top))
    }

    /// Simulates the noiseless mean signal for each qubit basis state.
    pub fn reference_signals(&self) -> Result<Vec<Vec<f64>>> {
        let p = &self.params;
        (0..p.qubit_dim.min(2))
            .map(|q| {
                let mut qubit = vec![ZERO; p.qubit_dim];
                qubit[q] = ONE;
                let psi = QuantumState::product_vacuum(&qubit, p.fock_cutoff);
                self.evolve_deterministic(psi).map(|(s, _)| s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepMode {
    Stochastic,
    Deterministic,
}

fn normalize_mixed(rho: &mut CMatrix) -> Result<()> {
    let tr = rho.trace().re;
    if !(tr > 1e-6) || !tr.is_finite() {
        return Err(Error::NumericalFailure(format!("trace collapsed to {tr:e}")));
    }
    let n = rho.rows();
    let inv = 1.0 / tr;
    for i in 0..n {
        for j in i..n {
            let v = (rho[(i, j)] + rho[(j, i)].conj()) * (0.5 * inv);
            rho[(i, j)] = v;
            rho[(j, i)] = v.conj();
        }
    }
    Ok(())
}

/// M[A]ρ = (A − ⟨A⟩)ρ + h.c.
pub fn measurement_backaction(rho: &CMatrix, a: &CMatrix) -> CMatrix {
    let mean = a.trace_product(rho);
    let mut shifted = a.clone();
    for i in 0..a.rows() {
        shifted[(i, i)] -= mean;
    }
    let half = shifted.matmul(rho);
    &half + &half.dagger()
}

/// One stochastic step of ρ under Hamiltonian `h` and the channels of `p`,
/// with Wiener increment `dw` ~ Normal(0, dt).
pub fn sme_step(rho: &CMatrix, h: &CMatrix, p: &SimParams, dw: f64) -> Result<CMatrix> {
    let (u, kraus, engine) = single_step_ops(h, p)?;
    let mut r = rho.clone();
    let mut k = kraus.pattern.clone();
    engine.mixed_step(&mut r, &mut k, &u, dw)?;
    Ok(r)
}

/// One unconditional step under `h`; the mean of [`sme_step`] over dW.
pub fn lindblad_step(rho: &CMatrix, h: &CMatrix, p: &SimParams) -> Result<CMatrix> {
    let (u, kraus, engine) = single_step_ops(h, p)?;
    let mut r = rho.clone();
    let mut k = kraus.pattern.clone();
    engine.deterministic_step(&mut r, &mut k, &u)?;
    Ok(r)
}

fn single_step_ops(h: &CMatrix, p: &SimParams) -> Result<(SparseMatrix, KrausTemplate, Engine)> {
    if h.rows() != p.dim() {
        return Err(invalid("Hamiltonian dimension does not match params"));
    }
    let engine = Engine::new(p)?;
    let eig = hermitian_eig(h)?;
    let dt = p.dt();
    let u = SparseMatrix::from_dense(&eig.reconstruct_with(|l| C64::from_polar(1.0, -l * dt)), SPARSE_DROP);
    let mut engine = engine;
    engine.dt = dt;
    let ops = Operators::for_params(p);
    let decay = diagonal_decay(p)?;
    let base = CMatrix::from_diag(&decay.iter().map(|&g| c(1.0 - 0.5 * g * dt, 0.0)).collect::<Vec<_>>());
    engine.kraus = KrausTemplate::new(&base, &ops.a, &ops.a.matmul(&ops.a));
    let kraus = engine.kraus.clone();
    Ok((u, kraus, engine))
}

/// A simulated readout pulse.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub dt: f64,
    /// √κ⟨a+a†⟩_c at t_i = i·dt, i = 0..=N.
    pub signal: Vec<f64>,
    /// Wiener increments dW_i over [t_i, t_i + dt), i = 0..N.
    pub dw: Vec<f64>,
    pub integrated_current: f64,
    /// 0 = g, 1 = e.
    pub outcome: usize,
    pub final_state: QuantumState,
    pub top_fock_population: f64,
    pub truncation_warning: bool,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        (0..self.signal.len()).map(|i| i as f64 * self.dt).collect()
    }

    /// J(t_i) = √κ⟨a+a†⟩_c + dW_i/dt for i = 0..N.
    pub fn current_samples(&self) -> Vec<f64> {
        self.dw.iter().zip(&self.signal).map(|(w, s)| s + w / self.dt).collect()
    }

    pub fn duration(&self) -> f64 {
        self.dw.len() as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// J − δ > 0 means e.
    Positive,
    /// J − δ < 0 means e.
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorMode {
    Simple,
    Calibrated,
}

impl std::str::FromStr for DiscriminatorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(DiscriminatorMode::Simple),
            "calibrated" => Ok(DiscriminatorMode::Calibrated),
            other => Err(invalid(format!("unknown discriminator '{other}'"))),
        }
    }
}

/// Integration weights, threshold and orientation mapping a record to an
/// outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub mode: DiscriminatorMode,
    /// w(t) sampled uniformly over [0, T], linearly interpolated. Non-negative.
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub orientation: Orientation,
    /// Include ∫w dW in the integrated current.
    pub shot_noise: bool,
    /// Noiseless integrated currents (J_g, J_e) used for the calibration.
    pub reference: Option<(f64, f64)>,
}

impl Discriminator {
    /// w ≡ 1, δ = 0, with the given orientation.
    pub fn flat(orientation: Orientation, shot_noise: bool) -> Self {
        Discriminator {
            mode: DiscriminatorMode::Simple,
            weights: vec![1.0],
            threshold: 0.0,
            orientation,
            shot_noise,
            reference: None,
        }
    }

    /// w at fractional time x = t/T.
    pub fn weight_at(&self, x: f64) -> f64 {
        let n = self.weights.len();
        if n == 0 {
            return 0.0;
        }
        if n == 1 {
            return self.weights[0];
        }
        let pos = x.clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (pos.floor() as usize).min(n - 2);
        let f = pos - i as f64;
        self.weights[i] * (1.0 - f) + self.weights[i + 1] * f
    }
}

/// Trapezoidal ∫ w(t)·√κ⟨a+a†⟩_c dt over the record, plus the Itô sum
/// Σ w(t_i) dW_i when `disc.shot_noise` is set.
pub fn integrate_current(rec: &TrajectoryRecord, disc: &Discriminator) -> f64 {
    let n = rec.signal.len();
    if n < 2 {
        return 0.0;
    }
    let span = (n - 1) as f64;
    let w: Vec<f64> = (0..n).map(|i| disc.weight_at(i as f64 / span)).collect();
    let mut acc = 0.0;
    for i in 0..n - 1 {
        acc += 0.5 * (w[i] * rec.signal[i] + w[i + 1] * rec.signal[i + 1]) * rec.dt;
    }
    if disc.shot_noise {
        for (i, d) in rec.dw.iter().enumerate() {
            acc += w[i] * d;
        }
    }
    acc
}

fn integrate_signal(signal: &[f64], dt: f64, disc: &Discriminator) -> f64 {
    let rec = TrajectoryRecord {
        dt,
        signal: signal.to_vec(),
        dw: vec![],
        integrated_current: 0.0,
        outcome: 0,
        final_state: QuantumState::Pure(vec![]),
        top_fock_population: 0.0,
        truncation_warning: false,
    };
    let quiet = Discriminator { shot_noise: false, ..disc.clone() };
    integrate_current(&rec, &quiet)
}

/// Outcome 1 (e) if J − δ lies on the e side, else 0 (g). Ties go to g.
pub fn discriminate(j: f64, disc: &Discriminator) -> usize {
    let d = j - disc.threshold;
    let e = match disc.orientation {
        Orientation::Positive => d > 0.0,
        Orientation::Negative => d < 0.0,
    };
    usize::from(e)
}

/// Builds a discriminator from the noiseless g and e reference currents.
///
/// Calibrated mode uses w(t) = |J_g(t) − J_e(t)| (scaled to unit maximum)
/// and the midpoint of the weighted integrated references as threshold.
/// Simple mode uses w ≡ 1 and δ = 0.
pub fn calibrate_discriminator(
    engine: &Engine,
    mode: DiscriminatorMode,
    shot_noise: bool,
) -> Result<Discriminator> {
    let refs = engine.reference_signals()?;
    let (sg, se) = (&refs[0], &refs[1]);
    let dt = engine.dt();
    match mode {
        DiscriminatorMode::Calibrated => {
            let raw: Vec<f64> = sg.iter().zip(se).map(|(a, b)| (a - b).abs()).collect();
            let peak = raw.iter().cloned().fold(0.0, f64::max);
            if !(peak > 0.0) {
                return Err(Error::CalibrationFailure("g and e reference currents coincide".into()));
            }
            let weights: Vec<f64> = raw.iter().map(|w| w / peak).collect();
            let mut disc = Discriminator {
                mode,
                weights,
                threshold: 0.0,
                orientation: Orientation::Positive,
                shot_noise,
                reference: None,
            };
            let jg = integrate_signal(sg, dt, &disc);
            let je = integrate_signal(se, dt, &disc);
            if (jg - je).abs() <= 1e-12 * jg.abs().max(je.abs()).max(1e-300) {
                return Err(Error::CalibrationFailure(format!("indistinguishable references J_g = J_e = {jg}")));
            }
            disc.threshold = 0.5 * (jg + je);
            disc.orientation = if je > disc.threshold { Orientation::Positive } else { Orientation::Negative };
            disc.reference = Some((jg, je));
            Ok(disc)
        }
        DiscriminatorMode::Simple => {
            let mut disc = Discriminator::flat(Orientation::Positive, shot_noise);
            let jg = integrate_signal(sg, dt, &disc);
            let je = integrate_signal(se, dt, &disc);
            if (jg - je).abs() <= 1e-12 * jg.abs().max(je.abs()).max(1e-300) {
                return Err(Error::CalibrationFailure(format!("indistinguishable references J_g = J_e = {jg}")));
            }
            let e_positive = if je != 0.0 { je > 0.0 } else { je > jg };
            disc.orientation = if e_positive { Orientation::Positive } else { Orientation::Negative };
            disc.reference = Some((jg, je));
            Ok(disc)
        }
    }
}

/// Writes trajectory records as long-format CSV: one row per time sample.
pub fn write_trajectories_csv<W: Write>(
    mut out: W,
    records: &[TrajectoryRecord],
    param_hash: &str,
    seed: u64,
) -> Result<()> {
    writeln!(out, "# param_hash={param_hash} seed={seed}")?;
    writeln!(out, "trajectory,t,signal,current,integrated_current,outcome")?;
    for (k, rec) in records.iter().enumerate() {
        let cur = rec.current_samples();
        for (i, s) in rec.signal.iter().enumerate() {
            let j = cur.get(i).copied().unwrap_or(f64::NAN);
            writeln!(
                out,
                "{k},{:.12e},{:.12e},{:.12e},{:.12e},{}",
                i as f64 * rec.dt,
                s,
                j,
                rec.integrated_current,
                rec.outcome
            )?;
        }
    }
    Ok(())
}
