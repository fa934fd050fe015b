use serde::{Deserialize, Serialize};

use super::{simulate_channel_nominal, ChannelModel, NominalStats, ObservedCounts, PmQkdError, PmQkdModel, PmQkdParams, Result};
use crate::concentration::{compose_bounds, DeviationInputs, DeviationTerms, TrashStatistics};
use crate::finite_key::{asymptotic_rate, binary_entropy, key_length, m_ph_upper, FiniteKeyInputs, FiniteKeyResult};
use crate::operator::{eigendecompose, HermitianOperator};
use crate::protocol::{renormalize_with, Direction};
use crate::scalar::Real;
use crate::sdp::{default_margin, linear_bound, solve_dual_with_margin, verify_certificate, DualCertificate, VerificationReport};

/// Solves the dual SDP with the default margin, enlarging the margin up to three times
/// when the verification radius is not covered.
pub fn certify<T: Real>(model: &PmQkdModel<T>) -> Result<DualCertificate<T>> {
    let mut margin = default_margin(&model.problem)?;
    let mut last = None;
    for _ in 0..4 {
        let cert = solve_dual_with_margin(&model.problem, margin)?;
        if cert.verification.accepted {
            return Ok(cert);
        }
        last = Some(cert.verification);
        margin *= T::lit(10.0);
    }
    let v = last.expect("loop ran");
    Err(PmQkdError::Unverified(format!("λ_max = {} with radius {}", v.max_eig, v.radius)))
}

/// Rescales a certificate obtained at `from` to the (p_aux0, p_basis0) of `target` and
/// re-verifies it there. Ê_ph is proportional to p_aux0·p_basis0² while P̂_k and Q̂_l do not
/// depend on either, so the scaled multipliers stay dual feasible.
pub fn scale_certificate<T: Real>(
    cert: &DualCertificate<T>,
    from: &PmQkdParams<T>,
    target: &PmQkdModel<T>,
) -> Result<DualCertificate<T>> {
    let to = &target.params;
    if from.mu_x != to.mu_x || from.mu_y != to.mu_y {
        return Err(PmQkdError::Invalid("certificates only scale across p_aux0 and p_basis0".into()));
    }
    let f = to.p_aux0 * to.p_basis0 * to.p_basis0 / (from.p_aux0 * from.p_basis0 * from.p_basis0);
    let mut out = DualCertificate {
        lambda: cert.lambda.iter().map(|l| *l * f).collect(),
        eta: cert.eta.iter().map(|e| *e * f).collect(),
        margin: cert.margin * f,
        bound_value: cert.bound_value * f,
        verification: cert.verification,
        solver_meta: None,
    };
    out.verification = verify_certificate(&target.problem, &out);
    if !out.verification.accepted {
        return Err(PmQkdError::Unverified(format!(
            "scaled certificate has λ_max = {} with radius {}",
            out.verification.max_eig, out.verification.radius
        )));
    }
    Ok(out)
}

/// Spectrum of P̂^obs = 𝒯(Σλ_k P̂_k) paired with the probability of each eigenvalue in
/// Alice's source state ρ_A = 𝒯⁻¹(Gram).
pub(crate) fn trash_spectrum<T: Real>(model: &PmQkdModel<T>, lambda: &[T]) -> Result<Vec<(T, T)>> {
    let w = model.instance.ancilla_weights();
    let p_obs = renormalize_with(&model.lambda_operator(lambda), &w, 1, Direction::Forward)?;
    let gram = HermitianOperator::from_matrix_unchecked(model.instance.ancilla_gram());
    let rho = renormalize_with(&gram, &w, 1, Direction::Inverse)?;
    let es = eigendecompose(&p_obs)?;
    Ok(es
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, om)| {
            let v = es.vector(k);
            let rv = rho.matrix().matvec(&v);
            let pr: T = v.iter().zip(&rv).map(|(a, b)| (a.conj() * *b).re).sum();
            (*om, pr.max(T::zero()))
        })
        .collect())
}

pub fn trash_statistics<T: Real>(model: &PmQkdModel<T>, cert: &DualCertificate<T>) -> Result<TrashStatistics<T>> {
    let spec = trash_spectrum(model, &cert.lambda)?;
    let lambda_p = cert.lambda.iter().zip(&model.constraints.p_vals).map(|(l, p)| *l * *p).sum();
    Ok(TrashStatistics {
        p_trash: model.params.p_trash,
        lambda_p,
        omega_max: spec.iter().map(|s| s.0).fold(T::neg_infinity(), T::max),
        omega_min: spec.iter().map(|s| s.0).fold(T::infinity(), T::min),
        omega_sq_mean: spec.iter().map(|(om, pr)| *om * *om * *pr).sum(),
    })
}

/// −log₂(1 − η_tot)
pub fn plob_bound<T: Real>(channel: &ChannelModel<T>) -> T {
    -(T::one() - channel.eta_tot()).log2()
}

#[derive(Clone, Debug)]
pub enum Counts<T> {
    Nominal,
    Observed(ObservedCounts<T>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RateReport<T> {
    pub finite: FiniteKeyResult<T>,
    pub deviations: DeviationTerms<T>,
    pub trash: TrashStatistics<T>,
    pub nominal: NominalStats<T>,
    pub counts: ObservedCounts<T>,
    pub e_bit: T,
    pub asymptotic_rate: T,
    pub e_ph_asymptotic: T,
    pub plob: T,
    pub eta_tot: T,
}

pub fn finite_rate<T: Real>(
    model: &PmQkdModel<T>,
    channel: &ChannelModel<T>,
    cert: &DualCertificate<T>,
    counts: &Counts<T>,
) -> Result<RateReport<T>> {
    rate_with(model, &model.params, channel, cert, counts)
}

/// Rate for `params`, which may differ from `model.params` only in p_trash, n_tot, f_ec and
/// the budget.
fn rate_with<T: Real>(
    model: &PmQkdModel<T>,
    params: &PmQkdParams<T>,
    channel: &ChannelModel<T>,
    cert: &DualCertificate<T>,
    counts: &Counts<T>,
) -> Result<RateReport<T>> {
    let prepared = prepare(model, cert, verify_certificate(&model.problem, cert))?;
    rate_prepared(model, params, channel, cert, &prepared, counts)
}

/// The parts of a rate evaluation that depend only on the model and certificate.
struct Prepared<T> {
    verification: VerificationReport<T>,
    trash: TrashStatistics<T>,
}

fn prepare<T: Real>(
    model: &PmQkdModel<T>,
    cert: &DualCertificate<T>,
    verification: VerificationReport<T>,
) -> Result<Prepared<T>> {
    if !verification.accepted {
        return Err(PmQkdError::Unverified(format!(
            "λ_max = {} with radius {}",
            verification.max_eig, verification.radius
        )));
    }
    Ok(Prepared { verification, trash: trash_statistics(model, cert)? })
}

fn rate_prepared<T: Real>(
    model: &PmQkdModel<T>,
    params: &PmQkdParams<T>,
    channel: &ChannelModel<T>,
    cert: &DualCertificate<T>,
    prepared: &Prepared<T>,
    counts: &Counts<T>,
) -> Result<RateReport<T>> {
    params.validate()?;
    channel.validate()?;
    let verification = prepared.verification;
    let nominal = simulate_channel_nominal(params, channel);
    let obs = match counts {
        Counts::Nominal => nominal.counts(),
        Counts::Observed(c) => {
            c.validate()?;
            c.clone()
        }
    };
    let n = params.n_tot;
    let pt = params.p_trash;
    let mut trash = prepared.trash.clone();
    trash.p_trash = pt;
    let dev = compose_bounds(
        &params.budget,
        &DeviationInputs {
            n_tot: n,
            n_sig: obs.n_sig,
            n_sig_nom: nominal.n_sig_nom,
            eta: cert.eta.clone(),
            theta_q: obs.theta_q().to_vec(),
            theta_q_nom: nominal.theta_q_nom.to_vec(),
            norm: params.q_norms().to_vec(),
            trash,
        },
    )?;
    let half = T::lit(0.5);
    let e_bit = match counts {
        Counts::Nominal => nominal.e_bit_x_nom,
        Counts::Observed(c) if c.n_pass_x > T::zero() => c.n_bit_x / c.n_pass_x,
        Counts::Observed(_) => T::zero(),
    }
    .min(half);
    let inputs = FiniteKeyInputs {
        n_tot: n,
        n_sig: obs.n_sig,
        n_l: obs.n_l(params).to_vec(),
        certificate: DualCertificate { verification, ..cert.clone() },
        p_vals: model.constraints.p_vals.clone(),
        p_trash: pt,
        budget: params.budget.clone(),
        f_ec: params.f_ec,
        e_bit,
    };
    inputs.validate()?;
    let m = m_ph_upper(&inputs, &dev)?;
    let finite = key_length(&inputs, m)?;

    let q_sig = (T::one() - pt) * params.p_basis0 * params.p_basis0 * params.p_aux0 * nominal.p_pass_x_nom;
    let p_lin = linear_bound(cert, &model.constraints.p_vals, &nominal.q_nom());
    let e_ph = if q_sig > T::zero() { (T::one() - pt) * p_lin / q_sig } else { half };
    let asym = asymptotic_rate(q_sig, e_ph, nominal.e_bit_x_nom.min(half), params.f_ec)?;
    Ok(RateReport {
        finite,
        deviations: dev,
        trash,
        nominal,
        counts: obs,
        e_bit,
        asymptotic_rate: asym,
        e_ph_asymptotic: e_ph,
        plob: plob_bound(channel),
        eta_tot: channel.eta_tot(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ParamRange<T> {
    pub min: T,
    pub max: T,
}

impl<T: Real> ParamRange<T> {
    pub fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    /// `n` points; geometric spacing when `log` is set.
    fn grid(&self, n: usize, log: bool) -> Vec<T> {
        if n <= 1 || self.max <= self.min {
            return vec![if log { (self.min * self.max).sqrt() } else { (self.min + self.max) / T::lit(2.0) }];
        }
        let d = T::from_count(n - 1);
        (0..n)
            .map(|k| {
                let t = T::from_count(k) / d;
                if log {
                    self.min * (self.max / self.min).powf(t)
                } else {
                    self.min + (self.max - self.min) * t
                }
            })
            .collect()
    }

    /// Range of one grid step either side of `x`, kept inside `outer`. When `x` sits on an edge
    /// of the range the box keeps its width and moves instead, so the search can travel.
    fn around(&self, x: T, n: usize, log: bool, outer: &Self, moved: &mut bool) -> Self {
        let steps = T::from_count(n.max(2) - 1);
        let tol = T::lit(1e-9);
        let on_edge = (x - self.min).abs() <= tol * x.abs() || (self.max - x).abs() <= tol * x.abs();
        let at_outer = (x - outer.min).abs() <= tol * x.abs() || (outer.max - x).abs() <= tol * x.abs();
        let moving = on_edge && !at_outer;
        *moved |= moving;
        let (lo, hi) = if log {
            let r = if moving { (self.max / self.min).sqrt() } else { (self.max / self.min).powf(T::one() / steps) };
            (x / r, x * r)
        } else {
            let h = if moving { (self.max - self.min) / T::lit(2.0) } else { (self.max - self.min) / steps };
            (x - h, x + h)
        };
        Self { min: lo.max(outer.min), max: hi.min(outer.max) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SearchSpec<T> {
    pub mu_x: ParamRange<T>,
    pub mu_y: ParamRange<T>,
    pub p_basis0: ParamRange<T>,
    pub p_aux0: ParamRange<T>,
    pub p_trash: ParamRange<T>,
    /// Points per axis.
    pub grid: usize,
    /// Number of shrinking refinement rounds after the coarse pass.
    pub refinements: usize,
}

impl<T: Real> Default for SearchSpec<T> {
    fn default() -> Self {
        Self {
            mu_x: ParamRange::new(T::lit(1e-4), T::lit(0.5)),
            mu_y: ParamRange::new(T::lit(0.01), T::lit(1.0)),
            p_basis0: ParamRange::new(T::lit(0.5), T::lit(0.98)),
            p_aux0: ParamRange::new(T::lit(0.5), T::lit(0.98)),
            p_trash: ParamRange::new(T::lit(0.01), T::lit(0.5)),
            grid: 4,
            refinements: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Optimum<T> {
    pub params: PmQkdParams<T>,
    pub certificate: DualCertificate<T>,
    pub report: RateReport<T>,
}

/// Net key per pulse before flooring at zero. Equals the rate wherever that is positive and keeps
/// ranking points where it is not, so refinement can climb out of a zero-rate region.
fn search_score<T: Real>(report: &RateReport<T>, params: &PmQkdParams<T>) -> T {
    let f = &report.finite;
    let n_sig = report.counts.n_sig;
    if f.rate_per_pulse > T::zero() || !(n_sig > T::zero()) {
        return f.rate_per_pulse;
    }
    let half = T::lit(0.5);
    let r = (f.m_ph_upper / n_sig).max(T::zero());
    let h = binary_entropy(r.min(half)).unwrap_or(T::one()) + (r - half).max(T::zero());
    let s_pa = T::from_count(params.budget.s_pa as usize);
    (n_sig * (T::one() - h) - s_pa - f.h_ec) / params.n_tot
}

/// Cap on refinement rounds, counting rounds that only move the box.
const MAX_ROUNDS_PER_REFINEMENT: usize = 3;

fn best_of<T: Real>(cells: Vec<(T, Optimum<T>)>) -> Option<(T, Optimum<T>)> {
    cells.into_iter().max_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
}

/// Nested grid search: one SDP per (μ_X, μ_Y) point, certificate scaling across
/// (p_basis0, p_aux0) and a free p_trash axis, then refinement around the best point. A best
/// point on the edge of the current box moves the box instead of shrinking it.
pub fn optimize_parameters<T: Real>(
    base: &PmQkdParams<T>,
    channel: &ChannelModel<T>,
    spec: &SearchSpec<T>,
) -> Result<Optimum<T>> {
    channel.validate()?;
    let mut best = best_of(grid_pass(base, channel, spec)).ok_or(PmQkdError::NoFeasiblePoint)?;
    let mut cur = spec.clone();
    let (mut shrinks, mut rounds) = (0, 0);
    while shrinks < spec.refinements && rounds < MAX_ROUNDS_PER_REFINEMENT * spec.refinements {
        let p = &best.1.params;
        let mut moved = false;
        cur = SearchSpec {
            mu_x: cur.mu_x.around(p.mu_x, cur.grid, true, &spec.mu_x, &mut moved),
            mu_y: cur.mu_y.around(p.mu_y, cur.grid, true, &spec.mu_y, &mut moved),
            p_basis0: cur.p_basis0.around(p.p_basis0, cur.grid, false, &spec.p_basis0, &mut moved),
            p_aux0: cur.p_aux0.around(p.p_aux0, cur.grid, false, &spec.p_aux0, &mut moved),
            p_trash: cur.p_trash.around(p.p_trash, cur.grid, true, &spec.p_trash, &mut moved),
            ..cur
        };
        rounds += 1;
        if !moved {
            shrinks += 1;
        }
        if let Some(c) = best_of(grid_pass(base, channel, &cur)) {
            if c.0 > best.0 {
                best = c;
            }
        }
    }
    Ok(best.1)
}

/// One pass over the grid of `cur`; returns the best point of every (μ_X, μ_Y) cell with its score.
fn grid_pass<T: Real>(base: &PmQkdParams<T>, channel: &ChannelModel<T>, cur: &SearchSpec<T>) -> Vec<(T, Optimum<T>)> {
    let mut cells = Vec::new();
    for mx in cur.mu_x.grid(cur.grid, true) {
        for my in cur.mu_y.grid(cur.grid, true) {
            let reference = PmQkdParams {
                mu_x: mx,
                mu_y: my,
                p_basis0: (cur.p_basis0.min + cur.p_basis0.max) / T::lit(2.0),
                p_aux0: (cur.p_aux0.min + cur.p_aux0.max) / T::lit(2.0),
                ..base.clone()
            };
            let Ok(ref_model) = PmQkdModel::new(&reference, channel) else { continue };
            let Ok(ref_cert) = certify(&ref_model) else { continue };
            let mut cell: Option<(T, Optimum<T>)> = None;
            for pb in cur.p_basis0.grid(cur.grid, false) {
                for pa in cur.p_aux0.grid(cur.grid, false) {
                    let target = PmQkdParams { p_basis0: pb, p_aux0: pa, ..reference.clone() };
                    let Ok(model) = PmQkdModel::new(&target, channel) else { continue };
                    let Ok(cert) = scale_certificate(&ref_cert, &reference, &model) else { continue };
                    let Ok(prepared) = prepare(&model, &cert, cert.verification) else { continue };
                    for pt in cur.p_trash.grid(cur.grid, true) {
                        let params = PmQkdParams { p_trash: pt, ..target.clone() };
                        let Ok(report) = rate_prepared(&model, &params, channel, &cert, &prepared, &Counts::Nominal)
                        else {
                            continue;
                        };
                        let sc = search_score(&report, &params);
                        if cell.as_ref().map_or(true, |c| sc > c.0) {
                            cell = Some((sc, Optimum { params, certificate: cert.clone(), report }));
                        }
                    }
                }
            }
            cells.extend(cell);
        }
    }
    cells
}
