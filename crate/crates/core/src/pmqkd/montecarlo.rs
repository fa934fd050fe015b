use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::rate::trash_spectrum;
use super::{
    certify, finite_rate, honest_gram, simulate_channel_nominal, ChannelModel, Counts, ObservedCounts, PmQkdError,
    PmQkdModel, PmQkdParams, Result,
};
use crate::concentration::{delta_p, delta_ph, kato_delta, kato_optimal_params, Direction, TrashStatistics};
use crate::scalar::Real;
use crate::sdp::solve_primal;

/// Which renormalized state Ĝ drives the simulated rounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    /// The optimizer of the primal SDP.
    #[default]
    WorstCase,
    /// The state produced by the honest lossy channel.
    Honest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub source: StateSource,
}

pub const MIN_TRIALS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCoverage {
    pub name: String,
    pub epsilon: f64,
    pub violations: usize,
    pub frequency: f64,
    /// ε + 3σ with σ = √(ε(1−ε)/trials).
    pub threshold: f64,
    /// ε ≥ 10/trials; smaller failure probabilities cannot be resolved.
    pub measurable: bool,
    /// `None` when the bound is not measurable with this many trials.
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub seed: u64,
    pub source: StateSource,
    pub bounds: Vec<BoundCoverage>,
    /// Every measurable bound passed.
    pub pass: bool,
    /// At least one bound was too tight to measure and its threshold check was refused.
    pub refused: bool,
}

/// Round categories and their per-round probabilities.
struct RoundModel {
    probs: Vec<f64>,
    /// Trash-round eigenvalue of each trash category, aligned after the fixed categories.
    omegas: Vec<f64>,
}

const SIG_PH: usize = 0;
const SIG_OK: usize = 1;
const X_ERR: usize = 2;
const X_OK: usize = 3;
const Y_ERR: usize = 4;
const Y_OK: usize = 5;
const FIXED: usize = 6;

fn sample_multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0f64;
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        if left == 0 || mass <= 0.0 {
            out.push(0);
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("probability clamped").sample(rng);
        out.push(k);
        left -= k;
        mass -= p;
    }
    out
}

fn coverage(name: &str, eps: f64, violations: usize, trials: usize) -> BoundCoverage {
    let t = trials as f64;
    let freq = violations as f64 / t;
    let threshold = eps + 3.0 * (eps * (1.0 - eps) / t).sqrt();
    let measurable = eps >= 10.0 / t;
    BoundCoverage {
        name: name.to_string(),
        epsilon: eps,
        violations,
        frequency: freq,
        threshold,
        measurable,
        pass: measurable.then_some(freq <= threshold),
    }
}

/// Simulates i.i.d. rounds from Ĝ and counts how often each concentration bound and the
/// composed M_ph^U fail. The conditional expectations are constants under i.i.d. sampling.
pub fn monte_carlo_validate<T: Real>(
    params: &PmQkdParams<T>,
    channel: &ChannelModel<T>,
    cfg: &McConfig,
) -> Result<CoverageReport> {
    if cfg.trials < MIN_TRIALS {
        return Err(PmQkdError::Invalid(format!("need at least {MIN_TRIALS} trials, got {}", cfg.trials)));
    }
    let n_f = params.n_tot.to_f64_lossy();
    if !(n_f >= 1.0 && n_f <= 1e15) || n_f.fract() != 0.0 {
        return Err(PmQkdError::Invalid(format!("n_tot = {n_f} must be a whole number in [1, 1e15]")));
    }
    let model = PmQkdModel::new(params, channel)?;
    let cert = certify(&model)?;
    let g = match cfg.source {
        StateSource::WorstCase => solve_primal(&model.problem)?.g,
        StateSource::Honest => honest_gram(params, channel),
    };
    let tr = |op: &crate::operator::HermitianOperator<T>| op.inner(&g).to_f64_lossy().max(0.0);
    let q: Vec<f64> = model.constraints.q_ops.iter().map(tr).collect();
    let r_ph = tr(&model.phase.e_ph);
    let f = |x: T| x.to_f64_lossy();
    let (pb0, pb1, pa0, pa1, pt) =
        (f(params.p_basis0), f(params.p_basis1()), f(params.p_aux0), f(params.p_aux1()), f(params.p_trash));
    let nt = 1.0 - pt;
    let sig_pass = (pa0 * pb0 * pb0 * q[2]).max(r_ph);
    let (x_err, x_pass) = (pb0 * pb0 * pa1 * q[0], pb0 * pb0 * pa1 * q[2].max(q[0]));
    let (y_err, y_pass) = (pb1 * pb1 * q[1], pb1 * pb1 * q[3].max(q[1]));
    let spectrum = trash_spectrum(&model, &cert.lambda)?;
    let mut probs = vec![0.0; FIXED];
    probs[SIG_PH] = nt * r_ph;
    probs[SIG_OK] = nt * (sig_pass - r_ph);
    probs[X_ERR] = nt * x_err;
    probs[X_OK] = nt * (x_pass - x_err);
    probs[Y_ERR] = nt * y_err;
    probs[Y_OK] = nt * (y_pass - y_err);
    let mut omegas = Vec::with_capacity(spectrum.len());
    for (om, pr) in &spectrum {
        probs.push(pt * f(*pr));
        omegas.push(f(*om));
    }
    let rounds = RoundModel { probs, omegas };

    // per-round conditional expectations
    let e_ph = nt * r_ph;
    let e_theta = [nt * x_err, nt * y_err, nt * x_pass, nt * y_pass];
    let e_p: f64 = rounds.omegas.iter().zip(&rounds.probs[FIXED..]).map(|(o, p)| o * p).sum();

    let budget = &params.budget;
    let eps: Vec<f64> = budget.eps.iter().map(|e| f(*e)).collect();
    let nominal = simulate_channel_nominal(params, channel);
    let n = params.n_tot;
    let kato_q: Vec<_> = (0..4)
        .map(|l| {
            let e = cert.eta[l];
            if e == T::zero() {
                return Ok(None);
            }
            let dir = if e > T::zero() { Direction::Upper } else { Direction::Lower };
            Ok(Some(kato_optimal_params(n, nominal.theta_q_nom[l], budget.eps[l + 1], dir)?))
        })
        .collect::<Result<_>>()?;
    let trash = TrashStatistics {
        p_trash: params.p_trash,
        lambda_p: cert.lambda.iter().zip(&model.constraints.p_vals).map(|(l, p)| *l * *p).sum(),
        omega_max: spectrum.iter().map(|s| s.0).fold(T::neg_infinity(), T::max),
        omega_min: spectrum.iter().map(|s| s.0).fold(T::infinity(), T::min),
        omega_sq_mean: spectrum.iter().map(|(o, p)| *o * *o * *p).sum(),
    };
    let dp = f(delta_p(n, &trash, budget.eps[6], budget.eps[7])?);
    let d2 = f(trash.bernstein(n, budget.eps[6])?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut viol = [0usize; 8];
    for _ in 0..cfg.trials {
        let c = sample_multinomial(&mut rng, n_f as u64, &rounds.probs);
        let m_ph = c[SIG_PH] as f64;
        let n_sig = (c[SIG_PH] + c[SIG_OK]) as f64;
        let theta = [c[X_ERR] as f64, c[Y_ERR] as f64, (c[X_ERR] + c[X_OK]) as f64, (c[Y_ERR] + c[Y_OK]) as f64];
        let sum_p: f64 = c[FIXED..].iter().zip(&rounds.omegas).map(|(k, o)| *k as f64 * o).sum();

        let dph = f(delta_ph(n, T::lit(n_sig), nominal.n_sig_nom, budget.eps[0])?);
        if m_ph - n_f * e_ph > dph {
            viol[0] += 1;
        }
        for l in 0..4 {
            if let Some(k) = &kato_q[l] {
                let d = f(kato_delta(k, T::lit(theta[l])));
                let dev = theta[l] - n_f * e_theta[l];
                let bad = match k.direction {
                    Direction::Upper => dev > d,
                    Direction::Lower => -dev > d,
                };
                if bad {
                    viol[1 + l] += 1;
                }
            }
        }
        if sum_p - n_f * e_p > dp {
            viol[5] += 1;
        }
        if n_f * e_p - sum_p > d2 {
            viol[6] += 1;
        }
        let counts = ObservedCounts {
            n_sig: T::lit(n_sig),
            n_bit_x: T::lit(theta[0]),
            n_bit_y: T::lit(theta[1]),
            n_pass_x: T::lit(theta[2]),
            n_pass_y: T::lit(theta[3]),
        };
        let m_u = f(finite_rate(&model, channel, &cert, &Counts::Observed(counts))?.finite.m_ph_upper);
        if m_ph > m_u {
            viol[7] += 1;
        }
    }

    let composed = eps[0..6].iter().sum::<f64>() + eps[6];
    let mut bounds = vec![coverage("phase_error_kato", eps[0], viol[0], cfg.trials)];
    for l in 0..4 {
        if kato_q[l].is_some() {
            bounds.push(coverage(&format!("observation_{}_kato", l + 1), eps[l + 1], viol[1 + l], cfg.trials));
        }
    }
    // Δ_P uses Θ_P^U or Θ_P^L, which already carries one Bernstein failure
    bounds.push(coverage("trash_kato", eps[6] + eps[7], viol[5], cfg.trials));
    bounds.push(coverage("trash_bernstein", eps[6], viol[6], cfg.trials));
    bounds.push(coverage("composed_phase_error_bound", composed.min(1.0), viol[7], cfg.trials));
    let pass = bounds.iter().all(|b| b.pass != Some(false));
    let refused = bounds.iter().any(|b| !b.measurable);
    Ok(CoverageReport { trials: cfg.trials, seed: cfg.seed, source: cfg.source, bounds, pass, refused })
}
