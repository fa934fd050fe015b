//! Kato's inequality with closed-form parameters, Bernstein inversion and the composition of
//! deviation terms into Δ1 and Δ2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConcentrationError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no failure probability for term {0}")]
    MissingEpsilon(usize),
}

type Result<T> = std::result::Result<T, ConcentrationError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConcentrationError::Invalid(msg.into()))
}

/// Δ⁰ bounds Σ E(X|F) − Σ X; Δ¹ bounds Σ X − Σ E(X|F).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KatoParams<T> {
    pub a: T,
    pub b: T,
    pub direction: Direction,
    pub n: T,
    pub epsilon: T,
    pub x_nom: T,
}

fn check_kato_inputs<T: Real>(n: T, x_nom: T, epsilon: T) -> Result<()> {
    if !(n > T::zero()) || !n.is_finite() {
        return invalid(format!("n must be positive, got {n}"));
    }
    if !(x_nom >= T::zero() && x_nom <= n) {
        return invalid(format!("x_nom = {x_nom} outside [0, {n}]"));
    }
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return invalid(format!("epsilon = {epsilon} outside (0, 1]"));
    }
    Ok(())
}

/// b = √(a² − (ln ε / 2)(1 + 4a/(3√n))²), the constraint solved for b.
fn b_from_a<T: Real>(a: T, n: T, ln_eps: T) -> T {
    let s = T::one() + T::lit(4.0) * a / (T::lit(3.0) * n.sqrt());
    (a * a - ln_eps / T::lit(2.0) * s * s).max(T::zero()).sqrt()
}

/// Optimal (a, b) for the lower-direction bound.
fn lower_optimum<T: Real>(n: T, x: T, ln_eps: T) -> (T, T) {
    if ln_eps == T::zero() {
        return (T::zero(), T::zero());
    }
    let r = x / n;
    let q = r * (T::one() - r);
    let l = ln_eps;
    let d = T::lit(9.0) * n * q - T::lit(2.0) * l;
    let num = T::lit(27.0) * T::SQRT_2() * n * (T::one() - T::lit(2.0) * r) * (-l * d).sqrt()
        + T::lit(216.0) * n * q * l
        - T::lit(48.0) * l * l;
    let a = n.sqrt() * num / (T::lit(4.0) * (T::lit(9.0) * n - T::lit(8.0) * l) * d);
    (a, b_from_a(a, n, l))
}

/// Closed-form minimizer of b + a(2x_nom/n − 1) under the Kato constraint.
pub fn kato_optimal_params<T: Real>(n: T, x_nom: T, epsilon: T, direction: Direction) -> Result<KatoParams<T>> {
    check_kato_inputs(n, x_nom, epsilon)?;
    let l = epsilon.ln();
    let (a, b) = match direction {
        Direction::Lower => lower_optimum(n, x_nom, l),
        Direction::Upper => {
            let (a, b) = lower_optimum(n, n - x_nom, l);
            (-a, b)
        }
    };
    Ok(KatoParams { a, b, direction, n, epsilon, x_nom })
}

impl<T: Real> KatoParams<T> {
    /// The a = 0 point: b = √(−ln ε / 2), slightly better than Azuma.
    pub fn refined_azuma(n: T, epsilon: T, direction: Direction) -> Result<Self> {
        check_kato_inputs(n, T::zero(), epsilon)?;
        Ok(Self { a: T::zero(), b: (-epsilon.ln() / T::lit(2.0)).sqrt(), direction, n, epsilon, x_nom: T::zero() })
    }

    /// a in the lower-direction convention (sign flipped for the upper bound).
    fn a_lower(&self) -> T {
        match self.direction {
            Direction::Lower => self.a,
            Direction::Upper => -self.a,
        }
    }

    /// ln of the constraint value, exp(·) of which should equal ε.
    pub fn constraint_log(&self) -> T {
        let a = self.a_lower();
        let s = T::one() + T::lit(4.0) * a / (T::lit(3.0) * self.n.sqrt());
        -T::lit(2.0) * (self.b - a) * (self.b + a) / (s * s)
    }

    /// |exp(−(2b² − 2a²)/(1 + 4a/(3√n))²) − ε| / ε.
    pub fn relative_residual(&self) -> T {
        ((self.constraint_log() - self.epsilon.ln()).exp() - T::one()).abs()
    }

    /// b + a(2x_nom/n − 1)
    pub fn objective(&self) -> T {
        self.b + self.a * (T::lit(2.0) * self.x_nom / self.n - T::one())
    }
}

/// [b + a(2X/n − 1)]√n
pub fn kato_delta<T: Real>(params: &KatoParams<T>, x_observed: T) -> T {
    (params.b + params.a * (T::lit(2.0) * x_observed / params.n - T::one())) * params.n.sqrt()
}

/// Deviation D on the sum of n i.i.d. variables with |Y − EY| ≤ M and E(Y²) ≤ e, such that
/// exp(−D²/(2ne + 2MD/3)) = ε.
pub fn bernstein_delta<T: Real>(n: T, bound_m: T, second_moment_e: T, epsilon: T) -> Result<T> {
    if !(n > T::zero()) {
        return invalid(format!("n must be positive, got {n}"));
    }
    if !(bound_m > T::zero()) {
        return invalid(format!("M must be positive, got {bound_m}"));
    }
    if !(second_moment_e >= T::zero()) || !second_moment_e.is_finite() {
        return invalid(format!("second moment must be nonnegative, got {second_moment_e}"));
    }
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return invalid(format!("epsilon = {epsilon} outside (0, 1]"));
    }
    let l = epsilon.ln();
    if l == T::zero() {
        return Ok(T::zero());
    }
    let t = T::lit(2.0) * bound_m * l / T::lit(3.0);
    let disc = t * t - T::lit(8.0) * n * second_moment_e * l;
    Ok(-bound_m * l / T::lit(3.0) + disc.sqrt() / T::lit(2.0))
}

/// ln of the Bernstein tail bound at deviation D on the sum.
pub fn bernstein_log_tail<T: Real>(n: T, bound_m: T, second_moment_e: T, d: T) -> T {
    -d * d / (T::lit(2.0) * n * second_moment_e + T::lit(2.0) * bound_m * d / T::lit(3.0))
}

/// Upper deviation for the phase-error count, using Θ_ph ≤ N_sig.
pub fn delta_ph<T: Real>(n_tot: T, n_sig: T, n_sig_nom: T, eps0: T) -> Result<T> {
    if !(n_sig >= T::zero() && n_sig <= n_tot) {
        return invalid(format!("n_sig = {n_sig} outside [0, {n_tot}]"));
    }
    let p = kato_optimal_params(n_tot, n_sig_nom, eps0, Direction::Upper)?;
    if p.a > T::zero() {
        Ok(kato_delta(&p, n_sig))
    } else {
        Ok(kato_delta(&KatoParams::refined_azuma(n_tot, eps0, Direction::Upper)?, n_sig))
    }
}

/// Distribution data of the trash-round variable χ_P.
///
/// χ_P equals an eigenvalue ω of P̂^obs on trash rounds and 0 otherwise, so the range used by
/// both inequalities always contains 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrashStatistics<T> {
    pub p_trash: T,
    /// Σ λ_k p_k = tr(P̂^obs ρ) on a trash round.
    pub lambda_p: T,
    pub omega_max: T,
    pub omega_min: T,
    /// tr((P̂^obs)² ρ) on a trash round.
    pub omega_sq_mean: T,
}

impl<T: Real> TrashStatistics<T> {
    pub fn range_max(&self) -> T {
        self.omega_max.max(T::zero())
    }

    pub fn range_min(&self) -> T {
        self.omega_min.min(T::zero())
    }

    pub fn width(&self) -> T {
        self.range_max() - self.range_min()
    }

    /// E(χ_P) per round.
    pub fn mean(&self) -> T {
        self.p_trash * self.lambda_p
    }

    /// E(χ_P²) per round.
    pub fn second_moment(&self) -> T {
        self.p_trash * self.omega_sq_mean
    }

    pub fn bernstein(&self, n_tot: T, epsilon: T) -> Result<T> {
        bernstein_delta(n_tot, self.width(), self.second_moment(), epsilon)
    }

    /// Θ_P^nom, Θ_P^U, Θ_P^L.
    pub fn thetas(&self, n_tot: T, eps6: T) -> Result<(T, T, T)> {
        let w = self.width();
        if !(w > T::zero()) {
            return invalid("degenerate trash-round spectrum (ω_max = ω_min)");
        }
        let nom = n_tot * (self.mean() - self.range_min()) / w;
        let tol = n_tot * T::lit(1e-9);
        if !(nom >= -tol && nom <= n_tot + tol) {
            return invalid(format!("Θ_P^nom = {nom} outside [0, {n_tot}]"));
        }
        let d = self.bernstein(n_tot, eps6)?;
        let nom = nom.max(T::zero()).min(n_tot);
        let upper = (nom + d / w).min(n_tot);
        let lower = (nom - d / w).max(T::zero());
        Ok((nom, upper, lower))
    }
}

/// Δ¹_P = (ω_max − ω_min)·Δ¹(n, Θ_P^{U or L}, Θ_P^nom, ε_7).
pub fn delta_p<T: Real>(n_tot: T, trash: &TrashStatistics<T>, eps6: T, eps7: T) -> Result<T> {
    let (nom, upper, lower) = trash.thetas(n_tot, eps6)?;
    let p = kato_optimal_params(n_tot, nom, eps7, Direction::Upper)?;
    let theta = if p.a > T::zero() { upper } else { lower };
    Ok(trash.width() * kato_delta(&p, theta))
}

/// Failure probabilities: ε_0 (phase error), ε_1…ε_4 (observations), ε_5 = ε_6 + ε_7 (trash),
/// plus the privacy-amplification and error-correction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EpsilonBudget<T> {
    pub eps: Vec<T>,
    pub eps_ph: T,
    pub eps_ec: T,
    pub s_pa: u32,
    pub s_prime: u32,
}

impl<T: Real> Default for EpsilonBudget<T> {
    fn default() -> Self {
        let eps_ph = T::lit(2.0).powi(-66);
        let e = eps_ph / T::lit(14.0);
        Self {
            eps: vec![e, e, e, e, e, e + e, e, e],
            eps_ph,
            eps_ec: T::lit(2.0).powi(-32),
            s_pa: 66,
            s_prime: 32,
        }
    }
}

impl<T: Real> EpsilonBudget<T> {
    /// Every ε_j set to the same value; ε_5 = 2ε, ε_ph = 14ε, ε_EC = 2^(−s′).
    pub fn uniform(e: T, s_pa: u32, s_prime: u32) -> Self {
        let e5 = if e == T::one() { T::one() } else { e + e };
        Self {
            eps: vec![e, e, e, e, e, e5, e, e],
            eps_ph: (T::lit(14.0) * e).min(T::one()),
            eps_ec: T::lit(2.0).powi(-(s_prime as i32)),
            s_pa,
            s_prime,
        }
    }

    pub fn get(&self, j: usize) -> Result<T> {
        self.eps.get(j).copied().ok_or(ConcentrationError::MissingEpsilon(j))
    }

    pub fn eps_q(&self, l: usize) -> Result<T> {
        if l == 0 || l > 4 {
            return Err(ConcentrationError::MissingEpsilon(l));
        }
        self.get(l)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.len() != 8 {
            return invalid(format!("expected 8 failure probabilities, got {}", self.eps.len()));
        }
        for (j, e) in self.eps.iter().chain([&self.eps_ph, &self.eps_ec]).enumerate() {
            if !(*e > T::zero() && *e <= T::one()) {
                return invalid(format!("failure probability #{j} = {e} outside (0, 1]"));
            }
        }
        let tol = T::lit(1e-12);
        let e5 = self.eps[6] + self.eps[7];
        let all_one = self.eps.iter().all(|e| *e == T::one());
        if !all_one && (self.eps[5] - e5).abs() > tol * e5 {
            return invalid(format!("ε_5 = {} differs from ε_6 + ε_7 = {e5}", self.eps[5]));
        }
        let total: T = self.eps[..6].iter().copied().sum();
        if !all_one && total > self.eps_ph / T::lit(2.0) * (T::one() + tol) {
            return invalid(format!("ε_0 + … + ε_5 = {total} exceeds ε_ph/2 = {}", self.eps_ph / T::lit(2.0)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DeviationTerms<T> {
    pub delta_ph: T,
    pub delta_q: Vec<T>,
    pub delta_p: T,
    pub delta_bern: T,
    pub delta1: T,
    pub delta2: T,
}

/// Observed and nominal quantities entering Δ1 and Δ2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DeviationInputs<T> {
    pub n_tot: T,
    pub n_sig: T,
    pub n_sig_nom: T,
    /// η_l* from the certificate.
    pub eta: Vec<T>,
    /// Θ_{Q,l} = norm_l · N_l.
    pub theta_q: Vec<T>,
    pub theta_q_nom: Vec<T>,
    /// Normalization factor of each χ_{Q,l}.
    pub norm: Vec<T>,
    pub trash: TrashStatistics<T>,
}

/// Δ^{sgn(η)}_{Q,l} = |η|·Δ^{sgn(η)}(n, Θ, Θ^nom, ε)/norm.
pub fn delta_q<T: Real>(n_tot: T, eta: T, theta: T, theta_nom: T, norm: T, eps: T) -> Result<T> {
    if eta == T::zero() {
        return Ok(T::zero());
    }
    if !(norm > T::zero()) {
        return invalid(format!("normalization must be positive, got {norm}"));
    }
    let dir = if eta > T::zero() { Direction::Upper } else { Direction::Lower };
    let p = kato_optimal_params(n_tot, theta_nom, eps, dir)?;
    Ok(eta.abs() * kato_delta(&p, theta) / norm)
}

pub fn compose_bounds<T: Real>(budget: &EpsilonBudget<T>, inputs: &DeviationInputs<T>) -> Result<DeviationTerms<T>> {
    let l = inputs.eta.len();
    if inputs.theta_q.len() != l || inputs.theta_q_nom.len() != l || inputs.norm.len() != l {
        return invalid("observation vectors have inconsistent lengths");
    }
    let pt = inputs.trash.p_trash;
    if !(pt > T::zero() && pt < T::one()) {
        return invalid(format!("p_trash = {pt} outside (0, 1)"));
    }
    let dph = delta_ph(inputs.n_tot, inputs.n_sig, inputs.n_sig_nom, budget.get(0)?)?;
    let mut dq = Vec::with_capacity(l);
    for j in 0..l {
        dq.push(delta_q(
            inputs.n_tot,
            inputs.eta[j],
            inputs.theta_q[j],
            inputs.theta_q_nom[j],
            inputs.norm[j],
            budget.eps_q(j + 1)?,
        )?);
    }
    let eps6 = budget.get(6)?;
    let dp = delta_p(inputs.n_tot, &inputs.trash, eps6, budget.get(7)?)?;
    let dbern = inputs.trash.bernstein(inputs.n_tot, eps6)?;
    let sum_q: T = dq.iter().copied().sum();
    let delta1 = (dph + sum_q) / (T::one() - pt) + dp / pt;
    Ok(DeviationTerms { delta_ph: dph, delta_q: dq, delta_p: dp, delta_bern: dbern, delta1, delta2: dbern })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn azuma_point_is_feasible() {
        let p = KatoParams::refined_azuma(1e6, 1e-10, Direction::Upper).unwrap();
        assert!(p.relative_residual() < 1e-12);
        let d = kato_delta(&p, 123.0);
        assert_eq!(d, (-1e6f64 * (1e-10f64).ln() / 2.0).sqrt());
    }

    #[test]
    fn epsilon_one_is_zero() {
        let p = kato_optimal_params(1e4, 10.0, 1.0, Direction::Lower).unwrap();
        assert_eq!((p.a, p.b), (0.0, 0.0));
        assert_eq!(bernstein_delta(1e6, 1.0, 0.1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_meets_constraint() {
        for dir in [Direction::Lower, Direction::Upper] {
            let p = kato_optimal_params(1e6, 1e3, 1e-10, dir).unwrap();
            assert!(p.relative_residual() < 1e-9, "{:?}", p);
            assert!(p.b >= 0.0);
        }
    }

    #[test]
    fn centered_delta() {
        let p = kato_optimal_params(1e4f64, 5e3, 1e-3, Direction::Upper).unwrap();
        assert!((kato_delta(&p, 5e3) - p.b * 100.0).abs() < 1e-12);
    }

    #[test]
    fn bernstein_substitutes_back() {
        let d = bernstein_delta(1e6, 1.0, 0.01, 1e-10).unwrap();
        let r = bernstein_log_tail(1e6f64, 1.0, 0.01, d).exp();
        assert!((r - 1e-10).abs() <= 1e-9 * 1e-10);
        assert!(bernstein_delta(1e6, 1.0, 0.02, 1e-10).unwrap() > d);
        assert!(bernstein_delta(1e6, 1.0, -0.1, 0.1).is_err());
        assert!(bernstein_delta(1e6, 1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn default_budget_identity() {
        let b = EpsilonBudget::<f64>::default();
        b.validate().unwrap();
        let s = b.eps[0] + b.eps[1] + b.eps[2] + b.eps[3] + b.eps[4] + b.eps[6] + b.eps[7];
        assert!((s - b.eps_ph / 2.0).abs() <= 1e-15 * b.eps_ph);
    }

    #[test]
    fn degenerate_trash_spectrum() {
        let t = TrashStatistics { p_trash: 0.1, lambda_p: 0.0, omega_max: 0.0, omega_min: 0.0, omega_sq_mean: 0.0 };
        assert!(delta_p(1e6, &t, 0.1, 0.1).is_err());
    }

    #[test]
    fn eps6_one_collapses_thetas() {
        let t = TrashStatistics { p_trash: 0.1, lambda_p: -0.2, omega_max: 0.0, omega_min: -1.0, omega_sq_mean: 0.3 };
        let (nom, u, l) = t.thetas(1e6, 1.0).unwrap();
        assert_eq!(nom, u);
        assert_eq!(nom, l);
    }

    #[test]
    fn composition_with_unit_eps_vanishes() {
        let budget = EpsilonBudget::<f64>::uniform(1.0, 0, 0);
        let inputs = DeviationInputs {
            n_tot: 1e6,
            n_sig: 1e3,
            n_sig_nom: 1e3,
            eta: vec![1.0, -2.0],
            theta_q: vec![10.0, 100.0],
            theta_q_nom: vec![10.0, 100.0],
            norm: vec![0.5, 0.5],
            trash: TrashStatistics { p_trash: 0.1, lambda_p: -0.2, omega_max: 0.0, omega_min: -1.0, omega_sq_mean: 0.3 },
        };
        let d = compose_bounds(&budget, &inputs).unwrap();
        assert_eq!(d.delta1, 0.0);
        assert_eq!(d.delta2, 0.0);
    }

    #[test]
    fn single_precision() {
        let p = kato_optimal_params(1e4f32, 100.0, 1e-6, Direction::Upper).unwrap();
        assert!(p.relative_residual() < 1e-3);
    }
}
