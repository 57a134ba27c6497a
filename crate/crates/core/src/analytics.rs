//! Closed-form and semi-analytic results for the dispersive model: the
//! SNR-based readout fidelity, coherent pointer-state amplitudes, and the
//! Choi matrices obtained from pointer-state Kraus operators.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::linalg::{c, kron, CMatrix, C64, ONE, ZERO};
use crate::mle::ChoiSet;
use crate::model::{ModelKind, SimParams};
use crate::sme::{Discriminator, Orientation};

/// φ = 2 arctan(2χ/κ)
pub fn pointer_angle(chi: f64, kappa: f64) -> f64 {
    2.0 * (2.0 * chi / kappa).atan()
}

/// Signal-to-noise ratio of the time-integrated homodyne current for the
/// dispersive model with constant drive.
pub fn snr_dispersive(p: &SimParams) -> Result<f64> {
    let chi = p.chi()?;
    if !(p.kappa > 0.0 && p.t_meas > 0.0) {
        return Err(invalid("SNR needs kappa > 0 and t_meas > 0"));
    }
    let (k, t) = (p.kappa, p.t_meas);
    let phi = pointer_angle(chi, k);
    let s = phi.sin();
    if s == 0.0 {
        return Ok(0.0);
    }
    let prefactor = 4.0 * p.omega_c * s * t / (2.0 * k * t).sqrt();
    let bracket = 1.0 - 4.0 / (k * t) * ((phi / 2.0).cos().powi(2) - (chi * t + phi).sin() / s * (-k * t / 2.0).exp());
    Ok(prefactor * bracket)
}

/// F = 1 − ½ erfc(SNR/2)
pub fn fidelity_analytic(snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(invalid(format!("SNR must be non-negative, got {snr}")));
    }
    Ok(1.0 - 0.5 * erfc(snr / 2.0))
}

/// Coherent cavity amplitudes conditioned on the qubit being in g or e.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerTrajectory {
    pub times: Vec<f64>,
    pub alpha_g: Vec<C64>,
    pub alpha_e: Vec<C64>,
    pub chi: f64,
}

/// dα_s/dt = −(κ/2 + isχ)α_s − iΩ_c(t), s = −1 for g and +1 for e.
fn pointer_rhs(alpha: C64, s: f64, chi: f64, kappa: f64, omega: f64) -> C64 {
    -c(kappa / 2.0, s * chi) * alpha - c(0.0, omega)
}

/// Integrates both pointer amplitudes from vacuum with RK4 on `slices`
/// uniform steps over [0, T].
pub fn pointer_states_with(p: &SimParams, slices: usize) -> Result<PointerTrajectory> {
    if p.model != ModelKind::Dispersive {
        return Err(invalid("pointer states are defined for the dispersive model"));
    }
    if slices == 0 {
        return Err(invalid("need at least one time slice"));
    }
    let chi = p.chi()?;
    let h = p.t_meas / slices as f64;
    let mut times = Vec::with_capacity(slices + 1);
    let mut ag = Vec::with_capacity(slices + 1);
    let mut ae = Vec::with_capacity(slices + 1);
    let (mut g, mut e) = (ZERO, ZERO);
    for i in 0..=slices {
        let t = i as f64 * h;
        times.push(t);
        ag.push(g);
        ae.push(e);
        if i == slices {
            break;
        }
        let om0 = p.drive_at(t);
        let om1 = p.drive_at(t + 0.5 * h);
        let om2 = p.drive_at(t + h * (1.0 - 1e-12));
        for (a, s) in [(&mut g, -1.0), (&mut e, 1.0)] {
            let k1 = pointer_rhs(*a, s, chi, p.kappa, om0);
            let k2 = pointer_rhs(*a + k1 * (0.5 * h), s, chi, p.kappa, om1);
            let k3 = pointer_rhs(*a + k2 * (0.5 * h), s, chi, p.kappa, om1);
            let k4 = pointer_rhs(*a + k3 * h, s, chi, p.kappa, om2);
            *a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
    }
    Ok(PointerTrajectory { times, alpha_g: ag, alpha_e: ae, chi })
}

pub fn pointer_states(p: &SimParams) -> Result<PointerTrajectory> {
    pointer_states_with(p, time_slices(p)?)
}

/// α_s(∞) = −iΩ_c/(κ/2 + isχ) for constant drive.
pub fn pointer_steady_state(p: &SimParams, s: f64) -> Result<C64> {
    let chi = p.chi()?;
    Ok(c(0.0, -p.omega_c) / c(p.kappa / 2.0, s * chi))
}

/// ⟨q|α⟩ = π^{−1/4} exp(−(q − √2 Re α)²/2 + i√2 q Im α − i Re α Im α), so
/// that ⟨q⟩ = √2 Re α = ⟨a + a†⟩/√2.
pub fn coherent_wavefunction(alpha: C64, q: f64) -> C64 {
    let s2 = std::f64::consts::SQRT_2;
    let x = q - s2 * alpha.re;
    let phase = s2 * q * alpha.im - alpha.re * alpha.im;
    C64::from_polar(std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp(), phase)
}

/// Quadrature threshold equivalent to the discriminator threshold:
/// J = √(2κ) ∫ w(t) q dt for a quadrature sample q held over the window.
pub fn quadrature_threshold(p: &SimParams, disc: &Discriminator) -> f64 {
    let n = 2000;
    let wsum: f64 = (0..=n)
        .map(|i| {
            let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
            wt * disc.weight_at(i as f64 / n as f64)
        })
        .sum::<f64>()
        * p.t_meas
        / n as f64;
    disc.threshold / ((2.0 * p.kappa).sqrt() * wsum)
}

/// Coefficients of the analytic Choi matrices
/// Υ_g = a_g|gg⟩⟨gg| + b_g|ee⟩⟨ee| + ζ_g|ge⟩⟨ge| + ζ_g*|eg⟩⟨eg| and
/// Υ_e = (1−a_g)|gg⟩⟨gg| + (1−b_g)|ee⟩⟨ee| + ζ_e|ge⟩⟨ge| + ζ_e*|eg⟩⟨eg|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticChoiCoefficients {
    /// time-averaged ∫_{g region} |φ_g|²
    pub a_g: f64,
    /// time-averaged ∫_{g region} |φ_e|²
    pub b_g: f64,
    /// time-averaged ∫_{g region} e^{iωt} φ_g φ_e*
    pub zeta_g: C64,
    /// time-averaged ∫_{e region} e^{iωt} φ_g φ_e*
    pub zeta_e: C64,
    /// Quadrature threshold used.
    pub threshold_q: f64,
}

/// Default number of time slices: at least 200 and at least 16 per period
/// of the qubit precession.
fn time_slices(p: &SimParams) -> Result<usize> {
    let omega = (p.delta + p.chi()?).abs();
    Ok((16.0 * omega * p.t_meas / (2.0 * std::f64::consts::PI)).ceil().max(200.0) as usize)
}

/// Composite Simpson weights for `n` (even) intervals on [a, b].
fn simpson(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / n as f64;
    let xs = (0..=n).map(|i| a + i as f64 * h).collect();
    let ws = (0..=n)
        .map(|i| {
            let m = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            m * h / 3.0
        })
        .collect();
    (xs, ws)
}

/// Evaluates the analytic Choi matrices of the dispersive readout with
/// `q_points` quadrature nodes and `slices` time slices.
pub fn analytic_choi_dispersive_with(
    p: &SimParams,
    disc: &Discriminator,
    slices: usize,
    q_points: usize,
) -> Result<(ChoiSet, AnalyticChoiCoefficients)> {
    let traj = pointer_states_with(p, slices)?;
    let omega = p.delta + traj.chi;
    let dq = quadrature_threshold(p, disc);
    let s2 = std::f64::consts::SQRT_2;
    let means = traj.alpha_g.iter().chain(&traj.alpha_e).map(|a| s2 * a.re);
    let (lo, hi) = means.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), m| (l.min(m), h.max(m)));
    // ±8 standard deviations (σ = 1/√2) around every pointer mean
    let (qmin, qmax) = (lo - 8.0, hi + 8.0);
    let n = q_points.max(400).div_ceil(2) * 2;
    let (g_lo, g_hi) = match disc.orientation {
        Orientation::Positive => (qmin, dq.clamp(qmin, qmax)),
        Orientation::Negative => (dq.clamp(qmin, qmax), qmax),
    };
    let region = |a: f64, b: f64| if b > a { simpson(a, b, n) } else { (vec![], vec![]) };
    let (gx, gw) = region(g_lo, g_hi);
    let (ex, ew) = match disc.orientation {
        Orientation::Positive => region(g_hi, qmax),
        Orientation::Negative => region(qmin, g_lo),
    };
    let (fx, fw) = simpson(qmin, qmax, n);

    let nt = traj.times.len();
    let tw: Vec<f64> = (0..nt).map(|i| if i == 0 || i == nt - 1 { 0.5 } else { 1.0 } / (nt - 1) as f64).collect();
    let (mut a_g, mut b_g, mut zg, mut ze) = (0.0, 0.0, ZERO, ZERO);
    let mut worst_norm: f64 = 0.0;
    for i in 0..nt {
        let (ag, ae) = (traj.alpha_g[i], traj.alpha_e[i]);
        let rot = C64::from_polar(1.0, omega * traj.times[i]);
        let norm_g: f64 = fx.iter().zip(&fw).map(|(&q, &w)| w * coherent_wavefunction(ag, q).norm_sqr()).sum();
        let norm_e: f64 = fx.iter().zip(&fw).map(|(&q, &w)| w * coherent_wavefunction(ae, q).norm_sqr()).sum();
        worst_norm = worst_norm.max((norm_g - 1.0).abs()).max((norm_e - 1.0).abs());
        let (mut pg, mut pe, mut cg) = (0.0, 0.0, ZERO);
        for (&q, &w) in gx.iter().zip(&gw) {
            let (fg, fe) = (coherent_wavefunction(ag, q), coherent_wavefunction(ae, q));
            pg += w * fg.norm_sqr();
            pe += w * fe.norm_sqr();
            cg += fg * fe.conj() * w;
        }
        let mut ce = ZERO;
        for (&q, &w) in ex.iter().zip(&ew) {
            ce += coherent_wavefunction(ag, q) * coherent_wavefunction(ae, q).conj() * w;
        }
        a_g += tw[i] * pg;
        b_g += tw[i] * pe;
        zg += rot * cg * tw[i];
        ze += rot * ce * tw[i];
    }
    if worst_norm > 1e-6 {
        return Err(Error::NumericalFailure(format!(
            "quadrature grid too coarse: pointer wavefunction norm off by {worst_norm:.2e}"
        )));
    }
    let coeffs = AnalyticChoiCoefficients { a_g, b_g, zeta_g: zg, zeta_e: ze, threshold_q: dq };
    Ok((choi_from_coefficients(&coeffs), coeffs))
}

/// Default resolution: 801 quadrature nodes and [`time_slices`] slices.
pub fn analytic_choi_dispersive(p: &SimParams, disc: &Discriminator) -> Result<(ChoiSet, AnalyticChoiCoefficients)> {
    analytic_choi_dispersive_with(p, disc, time_slices(p)?, 800)
}

/// Assembles the two Choi matrices from their coefficients.
pub fn choi_from_coefficients(k: &AnalyticChoiCoefficients) -> ChoiSet {
    // row index i·2 + j: gg = 0, ge = 1, eg = 2, ee = 3
    let build = |gg: f64, ee: f64, ge: C64| {
        let mut u = CMatrix::zeros(4, 4);
        u[(0, 0)] = c(gg, 0.0);
        u[(3, 3)] = c(ee, 0.0);
        u[(1, 1)] = ge;
        u[(2, 2)] = ge.conj();
        u
    };
    ChoiSet {
        dim: 2,
        chois: vec![build(k.a_g, k.b_g, k.zeta_g), build(1.0 - k.a_g, 1.0 - k.b_g, k.zeta_e)],
    }
}

/// Brute-force reference: sums K_q(t) ⊗ K_q(t)* over a trapezoidal grid
/// with K_q(t) = φ_g(q,t)|g⟩⟨g| + e^{−iωt}φ_e(q,t)|e⟩⟨e|, without using the
/// structure of the result.
pub fn kraus_choi_bruteforce(p: &SimParams, disc: &Discriminator, slices: usize, q_points: usize) -> Result<ChoiSet> {
    let traj = pointer_states_with(p, slices)?;
    let omega = p.delta + traj.chi;
    let dq = quadrature_threshold(p, disc);
    let s2 = std::f64::consts::SQRT_2;
    let reach = traj.alpha_g.iter().chain(&traj.alpha_e).map(|a| (s2 * a.re).abs()).fold(dq.abs(), f64::max) + 9.0;
    // midpoint cells with an edge on the threshold, so the step in the
    // integrand does not spoil second-order convergence
    let h = 2.0 * reach / q_points as f64;
    let first = dq - ((dq + reach) / h).ceil() * h;
    let nt = traj.times.len();
    let mut out = vec![CMatrix::zeros(4, 4), CMatrix::zeros(4, 4)];
    for i in 0..nt {
        let wt = if i == 0 || i == nt - 1 { 0.5 } else { 1.0 } / (nt - 1) as f64;
        let rot = C64::from_polar(1.0, -omega * traj.times[i]);
        for m in 0..q_points + 2 {
            let q = first + (m as f64 + 0.5) * h;
            let wq = h;
            let mut kq = CMatrix::zeros(2, 2);
            kq[(0, 0)] = coherent_wavefunction(traj.alpha_g[i], q);
            kq[(1, 1)] = rot * coherent_wavefunction(traj.alpha_e[i], q);
            let above = q > dq;
            let is_e = match disc.orientation {
                Orientation::Positive => above,
                Orientation::Negative => !above,
            };
            out[usize::from(is_e)].axpy(c(wt * wq, 0.0), &kron(&kq, &kq.conj()));
        }
    }
    Ok(ChoiSet { dim: 2, chois: out })
}

/// Outcome probabilities p(g|g) and p(g|e) from closed-form Gaussian tails.
pub fn assignment_probabilities_closed_form(
    traj: &PointerTrajectory,
    threshold_q: f64,
    orientation: Orientation,
) -> (f64, f64) {
    let s2 = std::f64::consts::SQRT_2;
    let nt = traj.times.len();
    // P(q < δ) for |φ_α|² with mean √2 Re α and variance 1/2
    let below = |a: C64| 0.5 * erfc(-(threshold_q - s2 * a.re));
    let (mut pg, mut pe) = (0.0, 0.0);
    for i in 0..nt {
        let w = if i == 0 || i == nt - 1 { 0.5 } else { 1.0 } / (nt - 1) as f64;
        let (bg, be) = (below(traj.alpha_g[i]), below(traj.alpha_e[i]));
        match orientation {
            Orientation::Positive => {
                pg += w * bg;
                pe += w * be;
            }
            Orientation::Negative => {
                pg += w * (1.0 - bg);
                pe += w * (1.0 - be);
            }
        }
    }
    (pg, pe)
}

/// Υ_n applied to a density matrix gives the post-measurement state; this
/// returns E_g + E_e applied to the identity, which must be I for a
/// trace-preserving readout.
pub fn total_trace_check(cs: &ChoiSet) -> f64 {
    let mut s = CMatrix::zeros(2, 2);
    for n in 0..cs.n_outcomes() {
        s.axpy(ONE, &cs.marginal(n));
    }
    s.max_abs_diff(&CMatrix::identity(2))
}
