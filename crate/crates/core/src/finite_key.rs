//! Phase-error count bound, key length and security parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concentration::{DeviationTerms, EpsilonBudget};
use crate::scalar::Real;
use crate::sdp::DualCertificate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiniteKeyError {
    #[error("argument {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("certificate was not accepted by verification")]
    UnverifiedCertificate,
}

/// h(x) = −x log₂x − (1−x) log₂(1−x)
pub fn binary_entropy<T: Real>(x: T) -> Result<T, FiniteKeyError> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(FiniteKeyError::OutOfRange(x.to_f64_lossy()));
    }
    if x == T::zero() || x == T::one() {
        return Ok(T::zero());
    }
    Ok(-x * x.log2() - (T::one() - x) * (T::one() - x).log2())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FiniteKeyInputs<T> {
    pub n_tot: T,
    pub n_sig: T,
    /// N_l = Σ_u χ_{Q,l}, one per observation constraint.
    pub n_l: Vec<T>,
    pub certificate: DualCertificate<T>,
    pub p_vals: Vec<T>,
    pub p_trash: T,
    pub budget: EpsilonBudget<T>,
    pub f_ec: T,
    pub e_bit: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FiniteKeyResult<T> {
    pub m_ph_upper: T,
    pub key_length: T,
    pub h_ec: T,
    pub net_key: T,
    pub eps_pa: T,
    pub eps_tot: T,
    pub rate_per_pulse: T,
}

impl<T: Real> FiniteKeyInputs<T> {
    pub fn validate(&self) -> Result<(), FiniteKeyError> {
        if !(self.n_sig >= T::zero() && self.n_sig <= self.n_tot) {
            return Err(FiniteKeyError::Invalid(format!("n_sig = {} outside [0, {}]", self.n_sig, self.n_tot)));
        }
        if !(self.p_trash > T::zero() && self.p_trash < T::one()) {
            return Err(FiniteKeyError::Invalid(format!("p_trash = {} outside (0, 1)", self.p_trash)));
        }
        if self.n_l.len() != self.certificate.eta.len() || self.p_vals.len() != self.certificate.lambda.len() {
            return Err(FiniteKeyError::Invalid("counts do not match the certificate".into()));
        }
        if !(self.f_ec >= T::one()) {
            return Err(FiniteKeyError::Invalid(format!("f_EC = {} below 1", self.f_ec)));
        }
        if !(self.e_bit >= T::zero() && self.e_bit <= T::lit(0.5)) {
            return Err(FiniteKeyError::Invalid(format!("e_bit = {} outside [0, 1/2]", self.e_bit)));
        }
        Ok(())
    }

    /// Σ λ_k* p_k
    pub fn lambda_p(&self) -> T {
        self.certificate.lambda.iter().zip(&self.p_vals).map(|(l, p)| *l * *p).sum()
    }
}

/// M_ph^U = −Σ η_l* N_l − (1 − p_trash)·N_tot·Σ λ_k* p_k + (1 − p_trash)Δ1 + ((1 − p_trash)/p_trash)Δ2.
///
/// The trash term carries (1 − p_trash) rather than (1 − p_trash)/p_trash because
/// E(χ_P) = p_trash·Σ λ_k* p_k per round.
pub fn m_ph_upper<T: Real>(inputs: &FiniteKeyInputs<T>, dev: &DeviationTerms<T>) -> Result<T, FiniteKeyError> {
    if !inputs.certificate.verification.accepted {
        return Err(FiniteKeyError::UnverifiedCertificate);
    }
    let pt = inputs.p_trash;
    let obs: T = inputs.certificate.eta.iter().zip(&inputs.n_l).map(|(e, n)| *e * *n).sum();
    Ok(-obs - (T::one() - pt) * inputs.n_tot * inputs.lambda_p()
        + (T::one() - pt) * dev.delta1
        + (T::one() - pt) / pt * dev.delta2)
}

/// ε_PA = √(2(ε_ph + 2^(−s_PA)))
pub fn eps_pa<T: Real>(budget: &EpsilonBudget<T>) -> T {
    (T::lit(2.0) * (budget.eps_ph + T::lit(2.0).powi(-(budget.s_pa as i32)))).sqrt()
}

pub fn key_length<T: Real>(inputs: &FiniteKeyInputs<T>, m_ph_u: T) -> Result<FiniteKeyResult<T>, FiniteKeyError> {
    let e_pa = eps_pa(&inputs.budget);
    let eps_tot = inputs.budget.eps_ec + e_pa;
    let s_pa = T::from_count(inputs.budget.s_pa as usize);
    let (k, h_ec) = if inputs.n_sig > T::zero() {
        let m = m_ph_u.max(T::zero()).min(inputs.n_sig);
        let r = m / inputs.n_sig;
        let k = if r >= T::lit(0.5) {
            T::zero()
        } else {
            (inputs.n_sig * (T::one() - binary_entropy(r)?) - s_pa).max(T::zero())
        };
        (k, inputs.f_ec * inputs.n_sig * binary_entropy(inputs.e_bit)?)
    } else {
        (T::zero(), T::zero())
    };
    let net = (k - h_ec).max(T::zero());
    Ok(FiniteKeyResult {
        m_ph_upper: m_ph_u,
        key_length: k,
        h_ec,
        net_key: net,
        eps_pa: e_pa,
        eps_tot,
        rate_per_pulse: if inputs.n_tot > T::zero() { net / inputs.n_tot } else { T::zero() },
    })
}

/// R = Q_sig(1 − h(e_ph^U) − f_EC h(e_bit)), floored at 0.
pub fn asymptotic_rate<T: Real>(q_sig: T, e_ph_u: T, e_bit: T, f_ec: T) -> Result<T, FiniteKeyError> {
    let half = T::lit(0.5);
    let hp = binary_entropy(e_ph_u.max(T::zero()).min(half))?;
    let hb = binary_entropy(e_bit.max(T::zero()).min(half))?;
    Ok((q_sig * (T::one() - hp - f_ec * hb)).max(T::zero()))
}
