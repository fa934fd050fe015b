//! Phase-matching QKD: operators, channel model, certified finite-size rates, parameter
//! search and Monte Carlo validation.
//!
//! Alice's states are |(−1)^κ i^π √μ_π⟩ indexed by `i = κ + 2π`; Bob's likewise by `j`.
//! The SDP lives on the same-basis subspace, eight states `s = κ_a + 2π + 4κ_b` per
//! announcement ξ ∈ {0, 1, 2}, i.e. 24 dimensions in three blocks.

mod montecarlo;
mod rate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use montecarlo::{monte_carlo_validate, BoundCoverage, CoverageReport, McConfig, StateSource, MIN_TRIALS};
pub use rate::{
    certify, finite_rate, optimize_parameters, plob_bound, scale_certificate, trash_statistics, Counts,
    Optimum, ParamRange, RateReport, SearchSpec,
};

use crate::concentration::{ConcentrationError, EpsilonBudget};
use crate::finite_key::FiniteKeyError;
use crate::linalg::{CMatrix, C};
use crate::operator::{coherent_overlap, BlockLabel, HermitianOperator, OperatorError};
use crate::protocol::{
    build_inner_product_constraints, build_observation_constraints, build_phase_error_operator, BetaEntry,
    ConstraintSet, NuEntry, OutcomeKey, PhaseErrorSpec, ProtocolError, ProtocolInstance, ProtocolKind,
    TestProbability,
};
use crate::scalar::Real;
use crate::sdp::{ConstraintFamily, SdpConstraint, SdpError, SdpProblem};

#[derive(Debug, Error, Clone)]
pub enum PmQkdError {
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("certificate rejected: {0}")]
    Unverified(String),
    #[error("no feasible parameter point")]
    NoFeasiblePoint,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Concentration(#[from] ConcentrationError),
    #[error(transparent)]
    FiniteKey(#[from] FiniteKeyError),
}

pub type Result<T> = std::result::Result<T, PmQkdError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(PmQkdError::Invalid(msg.into()))
}

fn default_f_ec<T: Real>() -> T {
    T::lit(1.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PmQkdParams<T> {
    /// Mean photon number of X-basis states.
    pub mu_x: T,
    /// Mean photon number of Y-basis states.
    pub mu_y: T,
    pub p_basis0: T,
    pub p_aux0: T,
    pub p_trash: T,
    #[serde(default)]
    pub budget: EpsilonBudget<T>,
    #[serde(default = "default_f_ec")]
    pub f_ec: T,
    pub n_tot: T,
}

impl<T: Real> PmQkdParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu_x", self.mu_x), ("mu_y", self.mu_y)] {
            if !(v > T::zero()) || !v.is_finite() {
                return invalid(format!("{name} = {v} must be positive"));
            }
        }
        for (name, v) in [("p_basis0", self.p_basis0), ("p_aux0", self.p_aux0), ("p_trash", self.p_trash)] {
            if !(v > T::zero() && v < T::one()) {
                return invalid(format!("{name} = {v} outside (0, 1)"));
            }
        }
        if !(self.n_tot > T::zero()) {
            return invalid(format!("n_tot = {} must be positive", self.n_tot));
        }
        if !(self.f_ec >= T::one()) {
            return invalid(format!("f_ec = {} below 1", self.f_ec));
        }
        self.budget.validate()?;
        Ok(())
    }

    pub fn p_basis1(&self) -> T {
        T::one() - self.p_basis0
    }

    pub fn p_aux1(&self) -> T {
        T::one() - self.p_aux0
    }

    fn mu(&self, pi: usize) -> T {
        if pi == 0 {
            self.mu_x
        } else {
            self.mu_y
        }
    }

    /// Normalizations of χ_{Q,1..4}: p_basis0²·p_aux1 for X-basis variables, p_basis1² for Y.
    pub fn q_norms(&self) -> [T; 4] {
        let x = self.p_basis0 * self.p_basis0 * self.p_aux1();
        let y = self.p_basis1() * self.p_basis1();
        [x, y, x, y]
    }
}

fn default_attenuation<T: Real>() -> T {
    T::lit(0.2)
}

fn default_one<T: Real>() -> T {
    T::one()
}

fn default_half<T: Real>() -> T {
    T::lit(0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ChannelModel<T> {
    pub distance_km: T,
    #[serde(default = "default_attenuation")]
    pub attenuation_db_per_km: T,
    #[serde(default = "default_one")]
    pub detector_efficiency: T,
    pub dark_count: T,
    /// Fraction of the Alice–Bob fiber between Alice and Charlie.
    #[serde(default = "default_half")]
    pub charlie_position: T,
}

impl<T: Real> ChannelModel<T> {
    pub fn new(distance_km: T, dark_count: T) -> Self {
        Self {
            distance_km,
            attenuation_db_per_km: default_attenuation(),
            detector_efficiency: T::one(),
            dark_count,
            charlie_position: default_half(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_km >= T::zero()) || !self.distance_km.is_finite() {
            return invalid(format!("distance_km = {} must be nonnegative", self.distance_km));
        }
        if !(self.attenuation_db_per_km >= T::zero()) {
            return invalid("attenuation must be nonnegative");
        }
        if !(self.detector_efficiency > T::zero() && self.detector_efficiency <= T::one()) {
            return invalid(format!("detector efficiency {} outside (0, 1]", self.detector_efficiency));
        }
        if !(self.dark_count >= T::zero() && self.dark_count < T::one()) {
            return invalid(format!("dark count {} outside [0, 1)", self.dark_count));
        }
        if !(self.charlie_position >= T::zero() && self.charlie_position <= T::one()) {
            return invalid("charlie_position outside [0, 1]");
        }
        let (a, b) = self.arm_transmittances();
        if !(a > T::zero() && b > T::zero()) {
            return invalid("channel transmittance underflows to zero");
        }
        Ok(())
    }

    fn fiber(&self, km: T) -> T {
        T::lit(10.0).powf(-self.attenuation_db_per_km * km / T::lit(10.0))
    }

    /// Alice→Charlie and Bob→Charlie transmittances, detector efficiency included.
    pub fn arm_transmittances(&self) -> (T, T) {
        let da = self.distance_km * self.charlie_position;
        let db = self.distance_km - da;
        (self.fiber(da) * self.detector_efficiency, self.fiber(db) * self.detector_efficiency)
    }

    /// End-to-end Alice→Bob transmittance (both fiber arms times detector efficiency).
    pub fn eta_tot(&self) -> T {
        self.fiber(self.distance_km) * self.detector_efficiency
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ObservedCounts<T> {
    pub n_sig: T,
    pub n_bit_x: T,
    pub n_bit_y: T,
    pub n_pass_x: T,
    pub n_pass_y: T,
}

impl<T: Real> ObservedCounts<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [self.n_sig, self.n_bit_x, self.n_bit_y, self.n_pass_x, self.n_pass_y];
        if all.iter().any(|v| !(*v >= T::zero())) {
            return invalid("counts must be nonnegative");
        }
        if self.n_bit_x > self.n_pass_x || self.n_bit_y > self.n_pass_y {
            return invalid("bit-error count exceeds pass count");
        }
        Ok(())
    }

    /// Counts from per-pulse rates.
    pub fn from_rates(n_tot: T, rates: [T; 5]) -> Self {
        Self {
            n_sig: rates[0] * n_tot,
            n_bit_x: rates[1] * n_tot,
            n_bit_y: rates[2] * n_tot,
            n_pass_x: rates[3] * n_tot,
            n_pass_y: rates[4] * n_tot,
        }
    }

    /// N_l = Θ_{Q,l}/norm_l.
    pub fn n_l(&self, params: &PmQkdParams<T>) -> [T; 4] {
        let nrm = params.q_norms();
        let th = self.theta_q();
        [th[0] / nrm[0], th[1] / nrm[1], th[2] / nrm[2], th[3] / nrm[3]]
    }

    /// Θ_{Q,l}, which are the raw recorded counts.
    pub fn theta_q(&self) -> [T; 4] {
        [self.n_bit_x, self.n_bit_y, self.n_pass_x, self.n_pass_y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NominalStats<T> {
    /// Bit-error rate conditioned on a successful detection.
    pub e_bit_x_nom: T,
    pub e_bit_y_nom: T,
    pub p_pass_x_nom: T,
    pub p_pass_y_nom: T,
    pub n_sig_nom: T,
    pub theta_q_nom: [T; 4],
}

impl<T: Real> NominalStats<T> {
    /// (p_pass^X e_bit^X, p_pass^Y e_bit^Y, p_pass^X, p_pass^Y)
    pub fn q_nom(&self) -> [T; 4] {
        [
            self.p_pass_x_nom * self.e_bit_x_nom,
            self.p_pass_y_nom * self.e_bit_y_nom,
            self.p_pass_x_nom,
            self.p_pass_y_nom,
        ]
    }

    pub fn counts(&self) -> ObservedCounts<T> {
        ObservedCounts {
            n_sig: self.n_sig_nom,
            n_bit_x: self.theta_q_nom[0],
            n_bit_y: self.theta_q_nom[1],
            n_pass_x: self.theta_q_nom[2],
            n_pass_y: self.theta_q_nom[3],
        }
    }
}

/// Probabilities of (pass, pass with the wrong detector) for one same-basis pulse pair.
fn pass_and_error<T: Real>(mu: T, eta_a: T, eta_b: T, p_d: T) -> (T, T) {
    let (sa, sb) = (eta_a.sqrt(), eta_b.sqrt());
    let right = (sa + sb) * (sa + sb) * mu / T::lit(2.0);
    let wrong = (sa - sb) * (sa - sb) * mu / T::lit(2.0);
    let none_r = (T::one() - p_d) * (-right).exp();
    let none_w = (T::one() - p_d) * (-wrong).exp();
    // 1 − (1 − p_d)e^{−m} without cancellation
    let click = |m: T| p_d - (T::one() - p_d) * (-m).exp_m1();
    let err = click(wrong) * none_r;
    let ok = click(right) * none_w;
    (ok + err, err)
}

/// Nominal detection statistics. With Charlie at the midpoint these are
/// e^{−2ημ}p_d(1−p_d) for the joint bit-error probability and
/// (1−p_d)[1−e^{−2ημ}(1−p_d)] + e^{−2ημ}p_d(1−p_d) for p_pass, η being the per-arm transmittance.
pub fn simulate_channel_nominal<T: Real>(params: &PmQkdParams<T>, channel: &ChannelModel<T>) -> NominalStats<T> {
    let (ea, eb) = channel.arm_transmittances();
    let pd = channel.dark_count;
    let (px, jx) = pass_and_error(params.mu_x, ea, eb, pd);
    let (py, jy) = pass_and_error(params.mu_y, ea, eb, pd);
    let cond = |j: T, p: T| if p > T::zero() { j / p } else { T::zero() };
    let base = params.n_tot * (T::one() - params.p_trash);
    let x = base * params.p_basis0 * params.p_basis0;
    let y = base * params.p_basis1() * params.p_basis1();
    NominalStats {
        e_bit_x_nom: cond(jx, px),
        e_bit_y_nom: cond(jy, py),
        p_pass_x_nom: px,
        p_pass_y_nom: py,
        n_sig_nom: x * params.p_aux0 * px,
        theta_q_nom: [x * params.p_aux1() * jx, y * jy, x * params.p_aux1() * px, y * py],
    }
}

pub const SUBSPACE_DIM: usize = 8;
pub const ANNOUNCEMENTS: usize = 3;

/// (κ_a, κ_b, π) of same-basis state `s`.
pub fn same_basis_state(s: usize) -> (usize, usize, usize) {
    (s & 1, (s >> 2) & 1, (s >> 1) & 1)
}

/// Ancilla index u = 4i + j of same-basis state `s`.
pub fn same_basis_index(s: usize) -> usize {
    let (ka, kb, pi) = same_basis_state(s);
    4 * (ka + 2 * pi) + kb + 2 * pi
}

/// Coherent amplitude (−1)^κ i^π √μ_π.
fn amplitude<T: Real>(params: &PmQkdParams<T>, kappa: usize, pi: usize) -> C<T> {
    let r = params.mu(pi).sqrt() * if kappa == 1 { -T::one() } else { T::one() };
    if pi == 0 {
        C::new(r, T::zero())
    } else {
        C::new(T::zero(), r)
    }
}

fn party_gram<T: Real>(params: &PmQkdParams<T>) -> CMatrix<T> {
    let amp = |i: usize| amplitude(params, i & 1, i >> 1);
    CMatrix::from_fn(4, 4, |i, k| coherent_overlap(amp(i), amp(k)))
}

fn restrict<T: Real>(m: &CMatrix<T>) -> CMatrix<T> {
    CMatrix::from_fn(SUBSPACE_DIM, SUBSPACE_DIM, |s, t| m[(same_basis_index(s), same_basis_index(t))])
}

/// Restricts a block-diagonal operator on ⊕_ξ (16-dim ancilla) to ⊕_ξ (same-basis subspace).
fn restrict_blocks<T: Real>(op: &HermitianOperator<T>) -> Result<HermitianOperator<T>> {
    let blocks = op.blocks().ok_or_else(|| PmQkdError::Invalid("operator lacks block labels".into()))?;
    let parts: Vec<_> = blocks
        .iter()
        .map(|b| {
            let m = op.matrix().sub_block(b.start, b.start, b.len, b.len);
            HermitianOperator::from_matrix_unchecked(restrict(&m))
        })
        .collect();
    Ok(HermitianOperator::block_diagonal(&parts))
}

/// Everything the SDP and the finite-size analysis need for one parameter set.
#[derive(Clone, Debug)]
pub struct PmQkdModel<T> {
    pub params: PmQkdParams<T>,
    /// Full MDI instance (16-dimensional ancilla, three announcements).
    pub instance: ProtocolInstance<T>,
    /// Ê_ph on the 24-dimensional space; `e_obs_blocks` are the 16-dimensional Ê^obs,ξ.
    pub phase: PhaseErrorSpec<T>,
    /// P̂_k restricted to the 8-dimensional subspace and Q̂_l on the 24-dimensional space.
    pub constraints: ConstraintSet<T>,
    /// P̂_k on the full 16-dimensional ancilla, used for the trash-round observable.
    pub p_ops_ancilla: Vec<HermitianOperator<T>>,
    pub problem: SdpProblem<T>,
}

fn pauli_x<T: Real>() -> CMatrix<T> {
    let (o, l) = (C::new(T::zero(), T::zero()), C::new(T::one(), T::zero()));
    CMatrix::from_vec(2, 2, vec![o, l, l, o])
}

/// Ê^obs,ξ_ph on A0⊗B0 for ξ ∈ {0, 1}: p_aux0 X^ξ U_CY† S|−⟩⟨−|S† U_CY X^ξ.
fn phase_error_povm<T: Real>(p_aux0: T, xi: usize) -> CMatrix<T> {
    let z = T::zero();
    let h = T::lit(0.5).sqrt();
    let v = [C::new(h, z), C::new(z, -h)];
    let proj = CMatrix::from_fn(2, 2, |r, c| v[r] * v[c].conj());
    let y = CMatrix::from_vec(2, 2, vec![C::new(z, z), C::new(z, -T::one()), C::new(z, T::one()), C::new(z, z)]);
    let p0 = CMatrix::from_real_diag(&[T::one(), z]);
    let p1 = CMatrix::from_real_diag(&[z, T::one()]);
    let ucy = &p0.kron(&CMatrix::identity(2)) + &p1.kron(&y);
    let mut op = ucy.adjoint().matmul(&proj.kron(&CMatrix::identity(2))).matmul(&ucy);
    if xi == 1 {
        let xb = CMatrix::identity(2).kron(&pauli_x());
        op = xb.matmul(&op).matmul(&xb);
    }
    op.scale(p_aux0)
}

/// The 64 (ν) and 16 (β) coefficient lists.
fn coefficients<T: Real>() -> (Vec<NuEntry<T>>, Vec<BetaEntry<T>>) {
    let mut nu = Vec::with_capacity(64);
    for sp in 0..SUBSPACE_DIM {
        for s in 0..SUBSPACE_DIM {
            nu.push(NuEntry { k: s + 8 * sp, u: same_basis_index(s), u_prime: same_basis_index(sp), coeff: T::one() });
        }
    }
    let quarter = T::lit(0.25);
    let mut beta = Vec::new();
    for pi in 0..2 {
        for ka in 0..2 {
            for kb in 0..2 {
                for xi in 0..2 {
                    let key = OutcomeKey { i: ka + 2 * pi, y: kb + 2 * pi, outcome: xi };
                    if ka != kb ^ xi {
                        beta.push(BetaEntry { l: pi, key, coeff: quarter });
                    }
                    beta.push(BetaEntry { l: 2 + pi, key, coeff: quarter });
                }
            }
        }
    }
    (nu, beta)
}

pub fn build_instance<T: Real>(params: &PmQkdParams<T>) -> Result<ProtocolInstance<T>> {
    let half = T::lit(0.5);
    let tau = vec![params.p_basis0 * half, params.p_basis0 * half, params.p_basis1() * half, params.p_basis1() * half];
    let g = party_gram(params);
    let mut p_test = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            if i >> 1 != j >> 1 {
                continue;
            }
            let p = if i >> 1 == 0 { params.p_aux1() } else { T::one() };
            for xi in 0..2 {
                p_test.push(TestProbability { key: OutcomeKey { i, y: j, outcome: xi }, p });
            }
        }
    }
    let inst = ProtocolInstance {
        kind: ProtocolKind::Mdi,
        d_a: 4,
        d_b: 4,
        tau_a: tau.clone(),
        tau_b: tau,
        gram_a: g.clone(),
        gram_b: Some(g),
        announcement_dim: ANNOUNCEMENTS,
        bob_povms: None,
        p_test,
        aux_probs: vec![params.p_aux0, params.p_aux1()],
    };
    inst.validate()?;
    Ok(inst)
}

/// Builds Ê_ph, P̂_k and Q̂_l with the nominal observation vector `q_nom`.
pub fn build_pmqkd_model<T: Real>(params: &PmQkdParams<T>, q_nom: [T; 4]) -> Result<PmQkdModel<T>> {
    params.validate()?;
    let instance = build_instance(params)?;
    let (nu, beta) = coefficients::<T>();

    let mut terms = Vec::with_capacity(ANNOUNCEMENTS);
    for xi in 0..ANNOUNCEMENTS {
        if xi < 2 {
            let m = phase_error_povm(params.p_aux0, xi);
            let mut full = CMatrix::zeros(16, 16);
            // A0B0 index (κ_a, κ_b) with π_a = π_b = 0 is ancilla index 4κ_a + κ_b
            for r in 0..4 {
                for c in 0..4 {
                    full[(4 * (r >> 1) + (r & 1), 4 * (c >> 1) + (c & 1))] = m[(r, c)];
                }
            }
            terms.push(vec![HermitianOperator::new(full)?]);
        } else {
            terms.push(vec![]);
        }
    }
    let full_phase = build_phase_error_operator(&instance, &terms)?;
    let e_ph = restrict_blocks(&full_phase.e_ph)?;
    let phase = PhaseErrorSpec { e_obs_blocks: full_phase.e_obs_blocks, e_ph };

    let (p_ops_ancilla, p_vals) = build_inner_product_constraints(&instance, &nu)?;
    let p_ops: Vec<_> =
        p_ops_ancilla.iter().map(|p| HermitianOperator::from_matrix_unchecked(restrict(p.matrix()))).collect();
    let q_ops = build_observation_constraints(&instance, &beta)?
        .iter()
        .map(restrict_blocks)
        .collect::<Result<Vec<_>>>()?;

    let constraints = ConstraintSet { p_ops, p_vals, q_ops, q_nom: q_nom.to_vec(), nu_coeffs: nu, beta_coeffs: beta };
    let problem = build_problem(&phase, &constraints)?;
    Ok(PmQkdModel { params: params.clone(), instance, phase, constraints, p_ops_ancilla, problem })
}

/// Model with the channel's nominal statistics as q_nom.
pub fn build_pmqkd_operators<T: Real>(
    params: &PmQkdParams<T>,
    channel: &ChannelModel<T>,
) -> Result<(PhaseErrorSpec<T>, ConstraintSet<T>, ProtocolInstance<T>)> {
    channel.validate()?;
    let m = build_pmqkd_model(params, simulate_channel_nominal(params, channel).q_nom())?;
    Ok((m.phase, m.constraints, m.instance))
}

fn build_problem<T: Real>(phase: &PhaseErrorSpec<T>, cs: &ConstraintSet<T>) -> Result<SdpProblem<T>> {
    let mut constraints = Vec::with_capacity(cs.p_ops.len() + cs.q_ops.len());
    for (p, v) in cs.p_ops.iter().zip(&cs.p_vals) {
        let lifted = HermitianOperator::block_diagonal(&vec![p.clone(); ANNOUNCEMENTS]);
        constraints.push(SdpConstraint { op: lifted, rhs: *v, family: ConstraintFamily::Gram });
    }
    for (q, v) in cs.q_ops.iter().zip(&cs.q_nom) {
        constraints.push(SdpConstraint { op: q.clone(), rhs: *v, family: ConstraintFamily::Observation });
    }
    Ok(SdpProblem::new(phase.e_ph.clone(), constraints)?)
}

impl<T: Real> PmQkdModel<T> {
    pub fn new(params: &PmQkdParams<T>, channel: &ChannelModel<T>) -> Result<Self> {
        channel.validate()?;
        build_pmqkd_model(params, simulate_channel_nominal(params, channel).q_nom())
    }

    pub fn block_labels(&self) -> Vec<BlockLabel> {
        (0..ANNOUNCEMENTS).map(|k| BlockLabel { label: k, start: k * SUBSPACE_DIM, len: SUBSPACE_DIM }).collect()
    }

    /// Σ λ_k P̂_k on the 16-dimensional ancilla.
    pub fn lambda_operator(&self, lambda: &[T]) -> HermitianOperator<T> {
        let mut out = HermitianOperator::zeros(16);
        for (p, l) in self.p_ops_ancilla.iter().zip(lambda) {
            out.axpy(*l, p);
        }
        out
    }
}

/// Renormalized state of the honest channel: Ĝ^ξ_{s,s'} = ⟨Φ_s|M_ξ|Φ_s'⟩ with the loss
/// environment, a 50:50 beam splitter at Charlie and threshold detectors with dark counts.
pub fn honest_gram<T: Real>(params: &PmQkdParams<T>, channel: &ChannelModel<T>) -> HermitianOperator<T> {
    let (ea, eb) = channel.arm_transmittances();
    let pd = channel.dark_count;
    let h = T::lit(0.5).sqrt();
    let amps: Vec<(C<T>, C<T>)> = (0..SUBSPACE_DIM)
        .map(|s| {
            let (ka, kb, pi) = same_basis_state(s);
            (amplitude(params, ka, pi), amplitude(params, kb, pi))
        })
        .collect();
    let modes: Vec<(C<T>, C<T>)> = amps
        .iter()
        .map(|(a, b)| {
            let (x, y) = (*a * ea.sqrt(), *b * eb.sqrt());
            ((x + y) * h, (x - y) * h)
        })
        .collect();
    let env = |s: usize, t: usize| {
        let (la, lb) = ((T::one() - ea).sqrt(), (T::one() - eb).sqrt());
        coherent_overlap(amps[s].0 * la, amps[t].0 * la) * coherent_overlap(amps[s].1 * lb, amps[t].1 * lb)
    };
    // ⟨γ|F₀|γ'⟩ with F₀ = (1 − p_d)|0⟩⟨0|
    let f0 = |g: C<T>, gp: C<T>| C::new((T::one() - pd) * (-(g.norm_sqr() + gp.norm_sqr()) / T::lit(2.0)).exp(), T::zero());
    let mut blocks = Vec::with_capacity(ANNOUNCEMENTS);
    for xi in 0..ANNOUNCEMENTS {
        let m = CMatrix::from_fn(SUBSPACE_DIM, SUBSPACE_DIM, |s, t| {
            let (g0, g1) = modes[s];
            let (h0, h1) = modes[t];
            let (o0, o1) = (coherent_overlap(g0, h0), coherent_overlap(g1, h1));
            let (n0, n1) = (f0(g0, h0), f0(g1, h1));
            let click0 = o0 - n0;
            let click1 = o1 - n1;
            let v = match xi {
                0 => click0 * n1,
                1 => n0 * click1,
                _ => o0 * o1 - click0 * n1 - n0 * click1,
            };
            env(s, t) * v
        });
        blocks.push(HermitianOperator::from_matrix_unchecked(m.hermitian_part()));
    }
    HermitianOperator::block_diagonal(&blocks)
}

#[cfg(test)]
mod tests;
