//! Constrained maximum-likelihood reconstruction of the measurement.
//!
//! Stage one fits the POVM {Π_n} to p̂(n|k). Stage two fits, for every
//! outcome n separately, the reshuffled Choi matrix Υ̃_n to p̂(mn|jk) with
//! its input marginal pinned to Π_nᵀ. Positivity comes from a Cholesky
//! parametrization; equality constraints from an augmented Lagrangian
//! around a BFGS inner solve.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    c, cholesky_factor_from_params, hermitian_eig, kron, partial_trace, psd_from_params, psd_inv_sqrt,
    psd_params_from_matrix, psd_sqrt, CMatrix, Subsystem, ONE, ZERO,
};
use crate::protocol::{KrausSet, Probabilities};

pub const POVM_PSD_TOL: f64 = 1e-9;
pub const POVM_COMPLETENESS_TOL: f64 = 1e-8;
pub const CHOI_PSD_TOL: f64 = 1e-9;
pub const CHOI_MARGINAL_TOL: f64 = 1e-6;

/// Row index convention written into serialized files.
pub const CHOI_CONVENTION: &str =
    "<ij|U_n|kl> = <i|E_n(|k><l|)|j>, row index i*d+j, column index k*d+l, entries [re, im], row-major";
pub const POVM_CONVENTION: &str = "Pi_n as d x d matrices, entries [re, im], row-major";

fn min_eigenvalue(m: &CMatrix) -> Result<f64> {
    Ok(hermitian_eig(&m.hermitian_part())?.min_value())
}

/// Measurement operators Π_n.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    pub dim: usize,
    pub elements: Vec<CMatrix>,
}

impl Povm {
    /// Checks positivity and completeness.
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        let povm = Povm::unchecked(elements)?;
        for (n, e) in povm.elements.iter().enumerate() {
            if !e.is_hermitian(POVM_PSD_TOL) {
                return Err(invalid(format!("POVM element {n} is not Hermitian")));
            }
            let lo = min_eigenvalue(e)?;
            if lo < -POVM_PSD_TOL {
                return Err(invalid(format!("POVM element {n} has eigenvalue {lo:.3e}")));
            }
        }
        let res = povm.completeness_residual();
        if res > POVM_COMPLETENESS_TOL {
            return Err(invalid(format!("POVM elements sum to identity only within {res:.3e}")));
        }
        Ok(povm)
    }

    fn unchecked(elements: Vec<CMatrix>) -> Result<Self> {
        let dim = elements.first().map(|e| e.rows()).ok_or_else(|| invalid("empty POVM"))?;
        if elements.iter().any(|e| e.rows() != dim || e.cols() != dim) {
            return Err(invalid("POVM elements must share one square dimension"));
        }
        Ok(Povm { dim, elements })
    }

    pub fn n_outcomes(&self) -> usize {
        self.elements.len()
    }

    /// max |Σ_n Π_n − I| entrywise.
    pub fn completeness_residual(&self) -> f64 {
        let mut s = CMatrix::zeros(self.dim, self.dim);
        for e in &self.elements {
            s.axpy(ONE, e);
        }
        s.max_abs_diff(&CMatrix::identity(self.dim))
    }

    /// Tr(Π_n ρ)
    pub fn probability(&self, n: usize, rho: &CMatrix) -> f64 {
        self.elements[n].trace_product(rho).re
    }
}

/// Υ̃^{ijkl} = Υ^{ikjl}. An involution; maps the row-ordered Choi matrix to
/// the PSD form Σ_kl E(|k⟩⟨l|) ⊗ |k⟩⟨l| and back.
pub fn reshuffle(m: &CMatrix, d: usize) -> CMatrix {
    CMatrix::from_fn(d * d, d * d, |r, s| {
        let (i, j) = (r / d, r % d);
        let (k, l) = (s / d, s % d);
        m[(i * d + k, j * d + l)]
    })
}

/// Choi matrices Υ_n of the instrument {E_n}.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiSet {
    pub dim: usize,
    pub chois: Vec<CMatrix>,
}

/// Deviations of a [`ChoiSet`] from its invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiDiagnostics {
    pub max_hermitian_deviation: f64,
    pub min_eigenvalue: f64,
    pub completeness_residual: f64,
}

impl ChoiSet {
    pub fn new(dim: usize, chois: Vec<CMatrix>) -> Result<Self> {
        if chois.is_empty() {
            return Err(invalid("empty Choi set"));
        }
        if chois.iter().any(|u| u.rows() != dim * dim || u.cols() != dim * dim) {
            return Err(invalid(format!("Choi matrices must be {0}x{0}", dim * dim)));
        }
        Ok(ChoiSet { dim, chois })
    }

    /// Υ_n = Σ_r K_{n,r} ⊗ K_{n,r}*
    pub fn from_kraus(kraus: &KrausSet) -> Self {
        let chois = kraus
            .outcomes
            .iter()
            .map(|ks| {
                let mut u = CMatrix::zeros(kraus.dim * kraus.dim, kraus.dim * kraus.dim);
                for k in ks {
                    u.axpy(ONE, &kron(k, &k.conj()));
                }
                u
            })
            .collect();
        ChoiSet { dim: kraus.dim, chois }
    }

    /// Builds the set from reshuffled (PSD form) matrices Υ̃_n.
    pub fn from_reshuffled(dim: usize, tilde: &[CMatrix]) -> Result<Self> {
        ChoiSet::new(dim, tilde.iter().map(|t| reshuffle(t, dim)).collect())
    }

    pub fn n_outcomes(&self) -> usize {
        self.chois.len()
    }

    pub fn reshuffled(&self, n: usize) -> CMatrix {
        reshuffle(&self.chois[n], self.dim)
    }

    /// E_n(ρ)^{ij} = Σ_kl Υ_n^{ijkl} ρ^{kl}
    pub fn apply(&self, n: usize, rho: &CMatrix) -> CMatrix {
        let d = self.dim;
        let u = &self.chois[n];
        CMatrix::from_fn(d, d, |i, j| {
            let mut s = ZERO;
            for k in 0..d {
                for l in 0..d {
                    s += u[(i * d + j, k * d + l)] * rho[(k, l)];
                }
            }
            s
        })
    }

    /// E_n†(O)^{ij} = Σ_kl conj(Υ_n^{klij}) O^{kl}
    pub fn adjoint_apply(&self, n: usize, o: &CMatrix) -> CMatrix {
        let d = self.dim;
        let u = &self.chois[n];
        CMatrix::from_fn(d, d, |i, j| {
            let mut s = ZERO;
            for k in 0..d {
                for l in 0..d {
                    s += u[(k * d + l, i * d + j)].conj() * o[(k, l)];
                }
            }
            s
        })
    }

    /// Π_n = E_n†(I), i.e. Π_n^{ij} = Σ_k Υ_n^{kkji}.
    pub fn marginal(&self, n: usize) -> CMatrix {
        let d = self.dim;
        let u = &self.chois[n];
        CMatrix::from_fn(d, d, |i, j| (0..d).map(|k| u[(k * d + k, j * d + i)]).sum())
    }

    pub fn diagnostics(&self) -> Result<ChoiDiagnostics> {
        let mut herm: f64 = 0.0;
        let mut lo = f64::INFINITY;
        let mut total = CMatrix::zeros(self.dim, self.dim);
        for n in 0..self.n_outcomes() {
            let t = self.reshuffled(n);
            herm = herm.max(t.hermitian_deviation());
            lo = lo.min(min_eigenvalue(&t)?);
            total.axpy(ONE, &self.marginal(n));
        }
        Ok(ChoiDiagnostics {
            max_hermitian_deviation: herm,
            min_eigenvalue: lo,
            completeness_residual: total.max_abs_diff(&CMatrix::identity(self.dim)),
        })
    }

    /// Checks positivity, completeness and (if given) the marginals.
    pub fn validate(&self, povm: Option<&Povm>) -> Result<()> {
        let diag = self.diagnostics()?;
        if diag.max_hermitian_deviation > CHOI_PSD_TOL || diag.min_eigenvalue < -CHOI_PSD_TOL {
            return Err(invalid(format!(
                "reshuffled Choi matrix not PSD (hermitian deviation {:.2e}, min eigenvalue {:.2e})",
                diag.max_hermitian_deviation, diag.min_eigenvalue
            )));
        }
        if diag.completeness_residual > CHOI_MARGINAL_TOL {
            return Err(invalid(format!("Choi completeness residual {:.2e}", diag.completeness_residual)));
        }
        if let Some(p) = povm {
            for n in 0..self.n_outcomes() {
                let dev = self.marginal(n).max_abs_diff(&p.elements[n]);
                if dev > CHOI_MARGINAL_TOL {
                    return Err(invalid(format!("Choi marginal {n} differs from Π_{n} by {dev:.2e}")));
                }
            }
        }
        Ok(())
    }
}

/// Π_n read off the Choi matrices by contraction.
pub fn povm_from_choi(cs: &ChoiSet) -> Povm {
    Povm { dim: cs.dim, elements: (0..cs.n_outcomes()).map(|n| cs.marginal(n)).collect() }
}

/// p(n|k) = Tr(Π_n ρ_k) and p(mn|jk) = Tr(Π_m U_j E_n(ρ_k) U_j†).
pub fn predicted_probabilities(povm: &Povm, cs: &ChoiSet, inputs: &[CMatrix], gates: &[CMatrix]) -> Probabilities {
    Probabilities::from_fn(
        povm.n_outcomes(),
        inputs.len(),
        gates.len(),
        |n, k| povm.probability(n, &inputs[k]),
        |m, n, j, k| povm.probability(m, &gates[j].sandwich(&cs.apply(n, &inputs[k]))),
    )
}

/// Serialized complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        MatrixJson { rows: m.rows(), cols: m.cols(), data: m.data().iter().map(|z| [z.re, z.im]).collect() }
    }
}

impl TryFrom<&MatrixJson> for CMatrix {
    type Error = Error;
    fn try_from(m: &MatrixJson) -> Result<Self> {
        CMatrix::from_vec(m.rows, m.cols, m.data.iter().map(|p| c(p[0], p[1])).collect())
            .map_err(|e| Error::Schema(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PovmFile {
    kind: String,
    convention: String,
    dim: usize,
    elements: Vec<MatrixJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiFile {
    kind: String,
    convention: String,
    dim: usize,
    chois: Vec<MatrixJson>,
}

impl Povm {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(PovmFile {
            kind: "povm".into(),
            convention: POVM_CONVENTION.into(),
            dim: self.dim,
            elements: self.elements.iter().map(MatrixJson::from).collect(),
        })
        .expect("POVM serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let f: PovmFile = serde_json::from_value(v.clone()).map_err(|e| Error::Schema(e.to_string()))?;
        if f.kind != "povm" {
            return Err(Error::Schema(format!("expected kind 'povm', found '{}'", f.kind)));
        }
        let elements = f.elements.iter().map(CMatrix::try_from).collect::<Result<Vec<_>>>()?;
        let p = Povm::unchecked(elements)?;
        if p.dim != f.dim {
            return Err(Error::Schema("POVM dimension mismatch".into()));
        }
        Ok(p)
    }
}

impl ChoiSet {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ChoiFile {
            kind: "choi-set".into(),
            convention: CHOI_CONVENTION.into(),
            dim: self.dim,
            chois: self.chois.iter().map(MatrixJson::from).collect(),
        })
        .expect("Choi set serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let f: ChoiFile = serde_json::from_value(v.clone()).map_err(|e| Error::Schema(e.to_string()))?;
        if f.kind != "choi-set" {
            return Err(Error::Schema(format!("expected kind 'choi-set', found '{}'", f.kind)));
        }
        let chois = f.chois.iter().map(CMatrix::try_from).collect::<Result<Vec<_>>>()?;
        ChoiSet::new(f.dim, chois).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Target for the equality-constraint residual (max abs entry).
    pub residual_tol: f64,
    /// Target for the final Lagrangian gradient norm (max abs entry).
    pub grad_tol: f64,
    pub prob_floor: f64,
    pub mu0: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 3,
            seed: 0,
            max_outer: 60,
            max_inner: 2000,
            residual_tol: 1e-8,
            grad_tol: 1e-7,
            prob_floor: 1e-12,
            mu0: 10.0,
        }
    }
}

/// Diagnostics of one constrained fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Negative log-likelihood at the returned point.
    pub objective: f64,
    pub residual: f64,
    pub grad_norm: f64,
    /// Largest entry change made by the final projection onto the constraints.
    pub projection_distance: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub best_start: usize,
    pub converged: bool,
}

/// Augmented-Lagrangian problem: a smooth objective f(x) and a Hermitian
/// equality constraint C(x) = 0.
pub trait ConstrainedProblem: Sync {
    fn n_params(&self) -> usize;
    fn constraint_dim(&self) -> usize;
    /// f + Re Tr(ΛC) + (μ/2)‖C‖² with its gradient, and C.
    fn evaluate(&self, x: &[f64], lambda: &CMatrix, mu: f64) -> (f64, Vec<f64>, CMatrix);
    fn initial_point(&self) -> Vec<f64>;
}

/// Chain rule through X = T†T: ∂/∂Re T_ab = 2 Re(G T†)_ba and
/// ∂/∂Im T_ab = −2 Im(G T†)_ba, in the parameter order of
/// `cholesky_factor_from_params`.
fn cholesky_gradient(g: &CMatrix, t: &CMatrix, out: &mut [f64]) {
    let d = t.rows();
    let gt = g.matmul(&t.dagger());
    for a in 0..d {
        out[a] = 2.0 * gt[(a, a)].re;
    }
    let mut k = d;
    for a in 0..d {
        for b in 0..a {
            out[k] = 2.0 * gt[(b, a)].re;
            out[k + 1] = -2.0 * gt[(b, a)].im;
            k += 2;
        }
    }
}

fn penalty(c_mat: &CMatrix, lambda: &CMatrix, mu: f64) -> (f64, CMatrix) {
    let val = lambda.trace_product(c_mat).re + 0.5 * mu * c_mat.trace_product(c_mat).re;
    let mut g = lambda.clone();
    g.axpy(c(mu, 0.0), c_mat);
    (val, g)
}

/// Stage one: −Σ_{nk} p̂(n|k) log Tr(Π_n ρ_k), constraint Σ_n Π_n − I.
pub struct PovmProblem {
    dim: usize,
    n_outcomes: usize,
    /// (n, p̂(n|k), ρ_k)
    terms: Vec<(usize, f64, CMatrix)>,
    floor: f64,
}

impl PovmProblem {
    pub fn new(probs: &Probabilities, inputs: &[CMatrix], floor: f64) -> Result<Self> {
        if inputs.len() != probs.n_inputs {
            return Err(invalid("number of inputs does not match the probability table"));
        }
        let dim = inputs[0].rows();
        let mut terms = Vec::new();
        for n in 0..probs.n_outcomes {
            for (k, rho) in inputs.iter().enumerate() {
                let p = probs.p1(n, k);
                if !(0.0..=1.0 + 1e-12).contains(&p) {
                    return Err(invalid(format!("p̂({n}|{k}) = {p} is not a probability")));
                }
                if p > 0.0 {
                    terms.push((n, p, rho.clone()));
                }
            }
        }
        Ok(PovmProblem { dim, n_outcomes: probs.n_outcomes, terms, floor })
    }

    pub fn elements(&self, x: &[f64]) -> Vec<CMatrix> {
        let np = self.dim * self.dim;
        (0..self.n_outcomes).map(|n| psd_from_params(&x[n * np..(n + 1) * np], self.dim).unwrap()).collect()
    }

    pub fn negative_log_likelihood(&self, x: &[f64]) -> f64 {
        let el = self.elements(x);
        self.terms.iter().map(|(n, p, rho)| -p * el[*n].trace_product(rho).re.max(self.floor).ln()).sum()
    }
}

impl ConstrainedProblem for PovmProblem {
    fn n_params(&self) -> usize {
        self.n_outcomes * self.dim * self.dim
    }

    fn constraint_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], lambda: &CMatrix, mu: f64) -> (f64, Vec<f64>, CMatrix) {
        let d = self.dim;
        let np = d * d;
        let factors: Vec<CMatrix> =
            (0..self.n_outcomes).map(|n| cholesky_factor_from_params(&x[n * np..(n + 1) * np], d).unwrap()).collect();
        let el: Vec<CMatrix> = factors.iter().map(|t| t.dagger().matmul(t)).collect();
        let mut cmat = CMatrix::identity(d).scale_real(-1.0);
        for e in &el {
            cmat.axpy(ONE, e);
        }
        let (pen, gpen) = penalty(&cmat, lambda, mu);
        let mut grads: Vec<CMatrix> = vec![gpen; self.n_outcomes];
        let mut f = pen;
        for (n, p, rho) in &self.terms {
            let model = el[*n].trace_product(rho).re;
            let clamped = model.max(self.floor);
            f -= p * clamped.ln();
            if model > self.floor {
                grads[*n].axpy(c(-p / model, 0.0), rho);
            }
        }
        let mut g = vec![0.0; self.n_params()];
        for n in 0..self.n_outcomes {
            cholesky_gradient(&grads[n], &factors[n], &mut g[n * np..(n + 1) * np]);
        }
        (f, g, cmat)
    }

    fn initial_point(&self) -> Vec<f64> {
        let seed = CMatrix::identity(self.dim).scale_real(1.0 / self.n_outcomes as f64);
        let v = psd_params_from_matrix(&seed).unwrap();
        (0..self.n_outcomes).flat_map(|_| v.iter().copied()).collect()
    }
}

/// Stage two for one outcome n: −Σ_{mjk} p̂(mn|jk) log Tr[(U_j†Π_mU_j ⊗ ρ_kᵀ) Υ̃_n]
/// subject to Tr_out Υ̃_n = Π_nᵀ.
///
/// Solved in whitened form Υ̃_n = (I⊗A) W (I⊗A)† with A = (Π_nᵀ)^{1/2}, so
/// the constraint reads Tr_out W = I. Every feasible Υ̃_n has this form
/// because its support lies in C^d ⊗ range(Π_nᵀ); the whitening keeps the
/// problem well conditioned when Π_n is nearly singular.
pub struct ChoiProblem {
    dim: usize,
    /// I⊗A
    whiten: CMatrix,
    /// (p̂(mn|jk), (I⊗A)† (U_j†Π_mU_j ⊗ ρ_kᵀ) (I⊗A))
    terms: Vec<(f64, CMatrix)>,
    floor: f64,
}

impl ChoiProblem {
    pub fn new(
        n: usize,
        probs: &Probabilities,
        povm: &Povm,
        gates: &[CMatrix],
        inputs: &[CMatrix],
        floor: f64,
    ) -> Result<Self> {
        if inputs.len() != probs.n_inputs || gates.len() != probs.n_gates || povm.n_outcomes() != probs.n_outcomes {
            return Err(invalid("POVM, gates or inputs do not match the probability table"));
        }
        let d = povm.dim;
        let whiten = kron(&CMatrix::identity(d), &psd_sqrt(&povm.elements[n].transpose().hermitian_part())?);
        let mut terms = Vec::new();
        for m in 0..probs.n_outcomes {
            for (j, u) in gates.iter().enumerate() {
                let eff = u.dagger().matmul(&povm.elements[m]).matmul(u);
                for (k, rho) in inputs.iter().enumerate() {
                    let p = probs.p2(m, n, j, k);
                    if !(0.0..=1.0 + 1e-12).contains(&p) {
                        return Err(invalid(format!("p̂({m}{n}|{j}{k}) = {p} is not a probability")));
                    }
                    if p > 0.0 {
                        let meas = kron(&eff, &rho.transpose());
                        terms.push((p, whiten.dagger().matmul(&meas).matmul(&whiten)));
                    }
                }
            }
        }
        Ok(ChoiProblem { dim: d, whiten, terms, floor })
    }

    /// W for the parameters `x`.
    pub fn whitened(&self, x: &[f64]) -> CMatrix {
        psd_from_params(x, self.dim * self.dim).unwrap()
    }

    /// Υ̃_n = (I⊗A) W (I⊗A)†
    pub fn reshuffled_choi_from_whitened(&self, w: &CMatrix) -> CMatrix {
        self.whiten.sandwich(w)
    }

    pub fn reshuffled_choi(&self, x: &[f64]) -> CMatrix {
        self.reshuffled_choi_from_whitened(&self.whitened(x))
    }

    pub fn negative_log_likelihood(&self, x: &[f64]) -> f64 {
        let w = self.whitened(x);
        self.terms.iter().map(|(p, m)| -p * m.trace_product(&w).re.max(self.floor).ln()).sum()
    }

    fn marginal(&self, w: &CMatrix) -> CMatrix {
        partial_trace(w, (self.dim, self.dim), Subsystem::B).unwrap()
    }
}

impl ConstrainedProblem for ChoiProblem {
    fn n_params(&self) -> usize {
        self.dim.pow(4)
    }

    fn constraint_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], lambda: &CMatrix, mu: f64) -> (f64, Vec<f64>, CMatrix) {
        let dd = self.dim * self.dim;
        let t = cholesky_factor_from_params(x, dd).unwrap();
        let w = t.dagger().matmul(&t);
        let mut cmat = self.marginal(&w);
        cmat.axpy(c(-1.0, 0.0), &CMatrix::identity(self.dim));
        let (pen, gpen) = penalty(&cmat, lambda, mu);
        let mut grad = kron(&CMatrix::identity(self.dim), &gpen);
        let mut f = pen;
        for (p, m) in &self.terms {
            let model = m.trace_product(&w).re;
            f -= p * model.max(self.floor).ln();
            if model > self.floor {
                grad.axpy(c(-p / model, 0.0), m);
            }
        }
        let mut g = vec![0.0; self.n_params()];
        cholesky_gradient(&grad, &t, &mut g);
        (f, g, cmat)
    }

    fn initial_point(&self) -> Vec<f64> {
        let d = self.dim;
        psd_params_from_matrix(&CMatrix::identity(d * d).scale_real(1.0 / d as f64)).unwrap()
    }
}

/// Central finite-difference gradient.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of an unconstrained BFGS solve.
#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective value after every accepted step, starting with f(x0).
    pub history: Vec<f64>,
}

/// BFGS with inverse-Hessian updates and Armijo backtracking. Stops when
/// the gradient max-norm falls below `gtol` or no descent is possible.
pub fn minimize_bfgs(
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    gtol: f64,
    max_iter: usize,
) -> BfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    let mut history = vec![fx];
    let mut it = 0;
    let mut fresh = true;
    while it < max_iter && inf_norm(&g) > gtol {
        it += 1;
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            reset(&mut h, 1.0);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
            fresh = true;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            // in the roundoff regime accept any step that keeps f flat and shrinks the gradient
            if fn_.is_finite() && (fn_ - fx).abs() <= 1e-14 * (1.0 + fx.abs()) && inf_norm(&gn) < inf_norm(&g) {
                accepted = Some((xn, fn_.min(fx), gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if fresh {
                break;
            }
            reset(&mut h, 1.0);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if fresh {
                reset(&mut h, sy / dot(&y, &y));
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
    }
    BfgsResult { grad_norm: inf_norm(&g), x, f: fx, iterations: it, history }
}

struct AlOutcome {
    x: Vec<f64>,
    residual: f64,
    grad_norm: f64,
    outer: usize,
    inner: usize,
}

fn augmented_lagrangian<P: ConstrainedProblem>(prob: &P, x0: Vec<f64>, opts: &FitOptions) -> AlOutcome {
    let cd = prob.constraint_dim();
    let mut lambda = CMatrix::zeros(cd, cd);
    let mut mu = opts.mu0;
    let mut x = x0;
    let mut prev_res = f64::INFINITY;
    let mut inner = 0;
    let mut out = AlOutcome { x: x.clone(), residual: f64::INFINITY, grad_norm: f64::INFINITY, outer: 0, inner: 0 };
    for outer in 1..=opts.max_outer {
        let gtol = (opts.grad_tol * 0.1).max(1e-12);
        let r = minimize_bfgs(|v| {
            let (f, g, _) = prob.evaluate(v, &lambda, mu);
            (f, g)
        }, &x, gtol, opts.max_inner);
        inner += r.iterations;
        x = r.x;
        let (_, _, cmat) = prob.evaluate(&x, &lambda, mu);
        let res = cmat.max_abs();
        out = AlOutcome { x: x.clone(), residual: res, grad_norm: r.grad_norm, outer, inner };
        if res <= opts.residual_tol && r.grad_norm <= opts.grad_tol {
            break;
        }
        lambda.axpy(c(mu, 0.0), &cmat);
        lambda = lambda.hermitian_part();
        if res > 0.25 * prev_res {
            mu = (mu * 10.0).min(1e9);
        }
        prev_res = res;
    }
    out
}

fn multistart<P: ConstrainedProblem>(
    prob: &P,
    opts: &FitOptions,
    nll: impl Fn(&[f64]) -> f64 + Sync,
    stream: u64,
) -> (AlOutcome, usize, f64) {
    let x0 = prob.initial_point();
    let starts = opts.starts.max(1);
    let runs: Vec<(AlOutcome, f64)> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let mut start = x0.clone();
            if s > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(stream * 1024 + s as u64);
                for v in start.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += 0.2 * z * (1.0 + v.abs());
                }
            }
            let out = augmented_lagrangian(prob, start, opts);
            let val = nll(&out.x);
            (out, val)
        })
        .collect();
    // feasible runs first, then lowest objective; ties go to the earliest start
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let fa = a.0.residual <= 1e-6;
            let fb = b.0.residual <= 1e-6;
            fb.cmp(&fa).then(a.1.total_cmp(&b.1))
        })
        .map(|(i, _)| i)
        .unwrap();
    let (out, val) = runs.into_iter().nth(best).unwrap();
    (out, best, val)
}

fn check_converged(report: &FitReport, what: &str) -> Result<()> {
    if report.residual > 1e-6 || !report.objective.is_finite() || report.grad_norm > 1e-3 {
        return Err(Error::OptimizationFailure(format!(
            "{what}: residual {:.2e}, gradient norm {:.2e}, objective {:.6e} after {} outer / {} inner iterations",
            report.residual, report.grad_norm, report.objective, report.outer_iterations, report.inner_iterations
        )));
    }
    Ok(())
}

/// Fits the POVM to the first-readout statistics.
pub fn fit_povm(probs: &Probabilities, inputs: &[CMatrix], opts: &FitOptions) -> Result<(Povm, FitReport)> {
    let prob = PovmProblem::new(probs, inputs, opts.prob_floor)?;
    let (out, best, _) = multistart(&prob, opts, |x| prob.negative_log_likelihood(x), 0);
    let raw = prob.elements(&out.x);
    // S^{-1/2} Π_n S^{-1/2} restores exact completeness
    let mut s = CMatrix::zeros(prob.dim, prob.dim);
    for e in &raw {
        s.axpy(ONE, e);
    }
    let w = psd_inv_sqrt(&s, 1e-14)?;
    let fixed: Vec<CMatrix> = raw.iter().map(|e| w.sandwich(e).hermitian_part()).collect();
    let dist = raw.iter().zip(&fixed).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
    let objective = prob
        .terms
        .iter()
        .map(|(n, p, rho)| -p * fixed[*n].trace_product(rho).re.max(opts.prob_floor).ln())
        .sum();
    let report = FitReport {
        objective,
        residual: out.residual,
        grad_norm: out.grad_norm,
        projection_distance: dist,
        outer_iterations: out.outer,
        inner_iterations: out.inner,
        best_start: best,
        converged: out.residual <= opts.residual_tol && out.grad_norm <= opts.grad_tol,
    };
    check_converged(&report, "POVM fit")?;
    Ok((Povm::new(fixed)?, report))
}

/// Fits one Choi matrix per outcome to the joint statistics, with marginals
/// pinned to `povm`.
pub fn fit_choi(
    probs: &Probabilities,
    povm: &Povm,
    gates: &[CMatrix],
    inputs: &[CMatrix],
    opts: &FitOptions,
) -> Result<(ChoiSet, Vec<FitReport>)> {
    for (n, e) in povm.elements.iter().enumerate() {
        if min_eigenvalue(e)? < -POVM_PSD_TOL {
            return Err(Error::OptimizationFailure(format!(
                "marginal Π_{n} is not positive, no Choi matrix can reproduce it"
            )));
        }
    }
    let fits: Vec<(CMatrix, FitReport)> = (0..povm.n_outcomes())
        .into_par_iter()
        .map(|n| {
            let prob = ChoiProblem::new(n, probs, povm, gates, inputs, opts.prob_floor)?;
            let (out, best, _) = multistart(&prob, opts, |x| prob.negative_log_likelihood(x), 1 + n as u64);
            let w = prob.whitened(&out.x);
            let raw = prob.reshuffled_choi_from_whitened(&w);
            // W ← (I⊗M^{-1/2}) W (I⊗M^{-1/2}) with M = Tr_out W restores Tr_out W = I
            let m = prob.marginal(&w).hermitian_part();
            let s = kron(&CMatrix::identity(prob.dim), &psd_inv_sqrt(&m, 1e-14)?);
            let w_fixed = s.sandwich(&w).hermitian_part();
            let fixed = prob.reshuffled_choi_from_whitened(&w_fixed).hermitian_part();
            let objective = prob
                .terms
                .iter()
                .map(|(p, mm)| -p * mm.trace_product(&w_fixed).re.max(opts.prob_floor).ln())
                .sum();
            let report = FitReport {
                objective,
                residual: out.residual,
                grad_norm: out.grad_norm,
                projection_distance: raw.max_abs_diff(&fixed),
                outer_iterations: out.outer,
                inner_iterations: out.inner,
                best_start: best,
                converged: out.residual <= opts.residual_tol && out.grad_norm <= opts.grad_tol,
            };
            check_converged(&report, &format!("Choi fit for outcome {n}"))?;
            Ok((fixed, report))
        })
        .collect::<Result<_>>()?;
    let (tildes, reports): (Vec<CMatrix>, Vec<FitReport>) = fits.into_iter().unzip();
    let cs = ChoiSet::from_reshuffled(povm.dim, &tildes)?;
    cs.validate(Some(povm)).map_err(|e| Error::OptimizationFailure(e.to_string()))?;
    Ok((cs, reports))
}
