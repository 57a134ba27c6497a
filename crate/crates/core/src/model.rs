//! Hamiltonians, collapse operators and the Lindblad generator of the
//! qubit⊗cavity system.
//!
//! Units: g = 1 by convention, every rate and time is quoted in units of g
//! and 1/g. Qubit basis index 0 is |g⟩, 1 is |e⟩ and 2 is |f⟩; the composite
//! index of |q⟩|n⟩ is `q * fock_cutoff + n`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{c, kron, CMatrix, C64, I, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Jc,
    Dispersive,
    MultilevelRwa,
}

impl std::str::FromStr for ModelKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jc" => Ok(ModelKind::Jc),
            "dispersive" => Ok(ModelKind::Dispersive),
            "multilevel" | "multilevel-rwa" => Ok(ModelKind::MultilevelRwa),
            other => Err(invalid(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Qubit–cavity detuning Δ.
    pub delta: f64,
    pub g: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub gamma_phi: f64,
    /// Peak cavity drive amplitude Ω_c.
    pub omega_c: f64,
    /// Optional tabulated envelope over [0, T]; Ω_c(t) = omega_c · envelope
    /// sample, piecewise constant. Absent means a rectangular pulse.
    pub drive_envelope: Option<Vec<f64>>,
    pub t_meas: f64,
    /// Integrator step; defaults to min(0.01, T/2000).
    pub dt: Option<f64>,
    pub fock_cutoff: usize,
    pub qubit_dim: usize,
    pub alpha_q: Option<f64>,
    pub model: ModelKind,
    /// Cavity–drive detuning Δ_c (multilevel model only).
    pub delta_c: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            delta: 19.2,
            g: 1.0,
            kappa: 0.2,
            gamma: 1e-4,
            gamma_phi: 1e-4,
            omega_c: 0.173,
            drive_envelope: None,
            t_meas: 40.0,
            dt: None,
            fock_cutoff: 8,
            qubit_dim: 2,
            alpha_q: None,
            model: ModelKind::Jc,
            delta_c: 0.0,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn dispersive() -> Self {
        SimParams { model: ModelKind::Dispersive, ..Default::default() }
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| 0.01f64.min(self.t_meas / 2000.0))
    }

    /// Number of integrator steps covering `duration`; the step actually
    /// used is `duration / steps`.
    pub fn steps_for(&self, duration: f64) -> usize {
        ((duration / self.dt()).round() as usize).max(1)
    }

    pub fn dim(&self) -> usize {
        self.qubit_dim * self.fock_cutoff
    }

    /// χ = g²/Δ
    pub fn chi(&self) -> Result<f64> {
        if self.delta == 0.0 {
            return Err(invalid("dispersive shift is singular at delta = 0"));
        }
        Ok(self.g * self.g / self.delta)
    }

    /// Drive amplitude at time t ∈ [0, T].
    pub fn drive_at(&self, t: f64) -> f64 {
        match &self.drive_envelope {
            None => self.omega_c,
            Some(env) if env.is_empty() => self.omega_c,
            Some(env) => {
                let x = (t / self.t_meas).clamp(0.0, 1.0);
                let idx = ((x * env.len() as f64) as usize).min(env.len() - 1);
                self.omega_c * env[idx]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("kappa", self.kappa), ("t_meas", self.t_meas), ("dt", self.dt())];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dt() > self.t_meas / 100.0 {
            return Err(invalid(format!(
                "dt = {} exceeds t_meas/100 = {}",
                self.dt(),
                self.t_meas / 100.0
            )));
        }
        for (name, v) in [("gamma", self.gamma), ("gamma_phi", self.gamma_phi)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.fock_cutoff < 4 {
            return Err(invalid(format!("fock_cutoff must be at least 4, got {}", self.fock_cutoff)));
        }
        match self.model {
            ModelKind::MultilevelRwa => {
                if self.qubit_dim != 3 {
                    return Err(invalid("multilevel-rwa model requires qubit_dim = 3"));
                }
                if self.alpha_q.is_none() {
                    return Err(invalid("multilevel-rwa model requires alpha_q"));
                }
            }
            _ => {
                if self.qubit_dim != 2 {
                    return Err(invalid(format!("{:?} model requires qubit_dim = 2", self.model)));
                }
            }
        }
        if let Some(env) = &self.drive_envelope {
            if env.iter().any(|x| !x.is_finite()) {
                return Err(invalid("drive_envelope contains non-finite samples"));
            }
        }
        Ok(())
    }
}

/// Cavity annihilation operator truncated to `n` Fock states.
pub fn annihilation(n: usize) -> CMatrix {
    let mut a = CMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = c((k as f64).sqrt(), 0.0);
    }
    a
}

/// σz = |e⟩⟨e| − |g⟩⟨g| on a qubit (or qutrit, with zero on |f⟩).
pub fn sigma_z(qdim: usize) -> CMatrix {
    let mut s = CMatrix::zeros(qdim, qdim);
    s[(0, 0)] = c(-1.0, 0.0);
    s[(1, 1)] = c(1.0, 0.0);
    s
}

/// σ₋ = |g⟩⟨e|
pub fn sigma_minus(qdim: usize) -> CMatrix {
    CMatrix::unit(qdim, 0, 1)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_vec(2, 2, vec![ZERO, -I, I, ZERO]).unwrap()
}

/// Operators lifted to the composite space.
#[derive(Debug, Clone)]
pub struct Operators {
    pub qubit_dim: usize,
    pub fock_cutoff: usize,
    pub a: CMatrix,
    pub sigma_minus: CMatrix,
    pub sigma_z: CMatrix,
    pub n_cav: CMatrix,
    /// Projector onto the highest retained Fock level.
    pub top_fock: CMatrix,
}

impl Operators {
    pub fn new(qubit_dim: usize, fock_cutoff: usize) -> Self {
        let iq = CMatrix::identity(qubit_dim);
        let ic = CMatrix::identity(fock_cutoff);
        let ac = annihilation(fock_cutoff);
        let a = kron(&iq, &ac);
        let n_cav = kron(&iq, &ac.dagger().matmul(&ac));
        Operators {
            qubit_dim,
            fock_cutoff,
            sigma_minus: kron(&sigma_minus(qubit_dim), &ic),
            sigma_z: kron(&sigma_z(qubit_dim), &ic),
            top_fock: kron(&iq, &CMatrix::unit(fock_cutoff, fock_cutoff - 1, fock_cutoff - 1)),
            a,
            n_cav,
        }
    }

    pub fn for_params(p: &SimParams) -> Self {
        Self::new(p.qubit_dim, p.fock_cutoff)
    }

    pub fn dim(&self) -> usize {
        self.qubit_dim * self.fock_cutoff
    }

    /// a + a†
    pub fn quadrature(&self) -> CMatrix {
        &self.a + &self.a.dagger()
    }

    /// Lifts a qubit operator to the composite space.
    pub fn qubit_op(&self, op: &CMatrix) -> CMatrix {
        kron(op, &CMatrix::identity(self.fock_cutoff))
    }
}

fn check_cutoff(p: &SimParams) -> Result<()> {
    if p.fock_cutoff < 2 {
        return Err(invalid(format!("fock_cutoff must be at least 2, got {}", p.fock_cutoff)));
    }
    Ok(())
}

/// Ω(a + a†) on the composite space.
pub fn drive_term(p: &SimParams, omega: f64) -> CMatrix {
    let ops = Operators::for_params(p);
    ops.quadrature().scale_real(omega)
}

/// Jaynes–Cummings Hamiltonian in the drive frame, without the drive term.
fn jc_static(p: &SimParams) -> Result<CMatrix> {
    check_cutoff(p)?;
    if p.qubit_dim != 2 {
        return Err(invalid("Jaynes-Cummings model requires qubit_dim = 2"));
    }
    let ops = Operators::for_params(p);
    let sp = ops.sigma_minus.dagger();
    let coupling = &sp.matmul(&ops.a) + &ops.a.dagger().matmul(&ops.sigma_minus);
    let mut h = ops.sigma_z.scale_real(p.delta / 2.0);
    h.axpy(c(p.g, 0.0), &coupling);
    Ok(h)
}

fn dispersive_static(p: &SimParams) -> Result<CMatrix> {
    check_cutoff(p)?;
    if p.qubit_dim != 2 {
        return Err(invalid("dispersive model requires qubit_dim = 2"));
    }
    let chi = p.chi()?;
    let ops = Operators::for_params(p);
    let mut h = ops.sigma_z.scale_real((p.delta + chi) / 2.0);
    h.axpy(c(chi, 0.0), &ops.sigma_z.matmul(&ops.n_cav));
    Ok(h)
}

fn multilevel_static(p: &SimParams) -> Result<CMatrix> {
    check_cutoff(p)?;
    if p.qubit_dim != 3 {
        return Err(invalid("multilevel model requires qubit_dim = 3"));
    }
    let alpha = p.alpha_q.ok_or_else(|| invalid("multilevel model requires alpha_q"))?;
    let ops = Operators::for_params(p);
    let delta_q = p.delta + p.delta_c;
    let ic = CMatrix::identity(p.fock_cutoff);
    // Levels sit at −Δ_q/2, +Δ_q/2 and 3Δ_q/2 + α_q in the drive frame.
    let proj_f = kron(&CMatrix::unit(3, 2, 2), &ic);
    let mut h = ops.sigma_z.scale_real(delta_q / 2.0);
    h.axpy(c(1.5 * delta_q + alpha, 0.0), &proj_f);
    h.axpy(c(p.delta_c, 0.0), &ops.n_cav);
    let sp = ops.sigma_minus.dagger();
    h.axpy(c(p.g, 0.0), &(&sp.matmul(&ops.a) + &ops.a.dagger().matmul(&ops.sigma_minus)));
    let f_from_e = kron(&CMatrix::unit(3, 2, 1), &ic);
    let fe = f_from_e.matmul(&ops.a);
    h.axpy(c(2f64.sqrt() * p.g, 0.0), &(&fe + &fe.dagger()));
    Ok(h)
}

/// H = (Δ/2)σz + g(σ₊a + a†σ₋) + Ω_c(a + a†)
pub fn build_jc_hamiltonian(p: &SimParams) -> Result<CMatrix> {
    Ok(&jc_static(p)? + &drive_term(p, p.omega_c))
}

/// H_d = ½(Δ+χ)σz + χσz a†a + Ω_c(a + a†) with χ = g²/Δ.
pub fn build_dispersive_hamiltonian(p: &SimParams) -> Result<CMatrix> {
    Ok(&dispersive_static(p)? + &drive_term(p, p.omega_c))
}

/// Qutrit RWA Hamiltonian with couplings g (g↔e) and √2·g (e↔f).
pub fn build_multilevel_hamiltonian(p: &SimParams) -> Result<CMatrix> {
    Ok(&multilevel_static(p)? + &drive_term(p, p.omega_c))
}

/// Drive-free part of the Hamiltonian selected by `p.model`.
pub fn static_hamiltonian(p: &SimParams) -> Result<CMatrix> {
    match p.model {
        ModelKind::Jc => jc_static(p),
        ModelKind::Dispersive => dispersive_static(p),
        ModelKind::MultilevelRwa => multilevel_static(p),
    }
}

/// Full Hamiltonian at drive amplitude `omega`.
pub fn hamiltonian_with_drive(p: &SimParams, omega: f64) -> Result<CMatrix> {
    Ok(&static_hamiltonian(p)? + &drive_term(p, omega))
}

pub fn build_hamiltonian(p: &SimParams) -> Result<CMatrix> {
    hamiltonian_with_drive(p, p.omega_c)
}

/// χ' = (g²/Δ)·α_q/(Δ+α_q)
pub fn modified_dispersive_shift(g: f64, delta: f64, alpha_q: f64) -> Result<f64> {
    if delta == 0.0 || delta + alpha_q == 0.0 || alpha_q.is_nan() {
        return Err(invalid(format!(
            "dispersive shift is singular at delta = {delta}, alpha_q = {alpha_q}"
        )));
    }
    if alpha_q.is_infinite() {
        return Ok(g * g / delta);
    }
    Ok(g * g / delta * alpha_q / (delta + alpha_q))
}

/// A collapse channel `rate · D[op]`.
#[derive(Debug, Clone)]
pub struct Collapse {
    pub rate: f64,
    pub op: CMatrix,
    /// Monitored by the homodyne detector.
    pub monitored: bool,
}

/// κ·D[a], γ·D[σ₋] and (γ_φ/2)·D[σz]; zero-rate channels are omitted.
pub fn collapse_operators(p: &SimParams) -> Vec<Collapse> {
    let ops = Operators::for_params(p);
    let mut out = Vec::new();
    if p.kappa > 0.0 {
        out.push(Collapse { rate: p.kappa, op: ops.a.clone(), monitored: true });
    }
    if p.gamma > 0.0 {
        out.push(Collapse { rate: p.gamma, op: ops.sigma_minus.clone(), monitored: false });
    }
    if p.gamma_phi > 0.0 {
        out.push(Collapse { rate: p.gamma_phi / 2.0, op: ops.sigma_z.clone(), monitored: false });
    }
    out
}

/// D[A]ρ = AρA† − {A†A, ρ}/2
pub fn dissipator(a: &CMatrix, rho: &CMatrix) -> CMatrix {
    let ada = a.dagger().matmul(a);
    let mut out = a.sandwich(rho);
    out.axpy(c(-0.5, 0.0), &ada.matmul(rho));
    out.axpy(c(-0.5, 0.0), &rho.matmul(&ada));
    out
}

/// −i[H,ρ] + κD[a]ρ + γD[σ₋]ρ + (γ_φ/2)D[σz]ρ
pub fn lindblad_drift(rho: &CMatrix, h: &CMatrix, p: &SimParams) -> Result<CMatrix> {
    if rho.rows() != h.rows() || !rho.is_square() || rho.rows() != p.dim() {
        return Err(invalid(format!(
            "state of dimension {} does not match Hamiltonian {} / params {}",
            rho.rows(),
            h.rows(),
            p.dim()
        )));
    }
    let mut out = h.commutator(rho).scale(-I);
    for col in collapse_operators(p) {
        out.axpy(c(col.rate, 0.0), &dissipator(&col.op, rho));
    }
    Ok(out)
}

/// Composite basis state |q⟩|n⟩ as a vector.
pub fn basis_state(p: &SimParams, q: usize, n: usize) -> Vec<C64> {
    let mut v = vec![ZERO; p.dim()];
    v[q * p.fock_cutoff + n] = c(1.0, 0.0);
    v
}
