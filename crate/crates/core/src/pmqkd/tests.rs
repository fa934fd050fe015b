use super::*;
use crate::operator::max_eigenvalue;
use crate::protocol::{aggregate_test_counts, CountEntry};
use crate::sdp::solve_primal;

fn params() -> PmQkdParams<f64> {
    PmQkdParams {
        mu_x: 0.05,
        mu_y: 0.1,
        p_basis0: 0.9,
        p_aux0: 0.8,
        p_trash: 0.1,
        budget: EpsilonBudget::default(),
        f_ec: 1.1,
        n_tot: 1e12,
    }
}

fn close(a: C<f64>, b: C<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol
}

#[test]
fn subspace_indices_cover_same_basis_pairs() {
    let mut seen: Vec<usize> = (0..SUBSPACE_DIM).map(same_basis_index).collect();
    for &u in &seen {
        assert_eq!((u / 4) >> 1, (u % 4) >> 1);
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), SUBSPACE_DIM);
}

/// Closed form: (p_aux0 p_basis0²/4) X^ξ (I − Y⊗Y)/2 X^ξ on the X-basis pairs.
#[test]
fn phase_operator_closed_form() {
    let p = params();
    let m = build_pmqkd_model(&p, [0.0; 4]).unwrap();
    let scale = p.p_aux0 * p.p_basis0 * p.p_basis0 / 4.0;
    let z = C::new(0.0, 0.0);
    let i = C::new(0.0, 1.0);
    let y = CMatrix::from_vec(2, 2, vec![z, -i, i, z]);
    let half_proj = &CMatrix::identity(4) - &y.kron(&y);
    let e = m.phase.e_ph.matrix();
    for xi in 0..ANNOUNCEMENTS {
        let mut expect = half_proj.scale(0.5 * scale);
        if xi == 1 {
            let xb = CMatrix::identity(2).kron(&pauli_x());
            expect = xb.matmul(&expect).matmul(&xb);
        }
        for s in 0..SUBSPACE_DIM {
            for t in 0..SUBSPACE_DIM {
                let (ka, kb, pi) = same_basis_state(s);
                let (ka2, kb2, pi2) = same_basis_state(t);
                let want = if xi == 2 || pi == 1 || pi2 == 1 { z } else { expect[(2 * ka + kb, 2 * ka2 + kb2)] };
                let got = e[(xi * SUBSPACE_DIM + s, xi * SUBSPACE_DIM + t)];
                assert!(close(got, want, 1e-14), "ξ={xi} ({s},{t}): {got} vs {want}");
            }
        }
    }
}

#[test]
fn phase_operator_trace_and_norm() {
    let p = params();
    let m = build_pmqkd_model(&p, [0.0; 4]).unwrap();
    let s = p.p_aux0 * p.p_basis0 * p.p_basis0;
    assert!((m.phase.e_ph.trace() - s).abs() < 1e-14);
    let top = max_eigenvalue(&m.phase.e_ph).unwrap();
    assert!((top.value - s / 4.0).abs() < 1e-12);
}

#[test]
fn second_announcement_is_bit_flip_of_first() {
    let m = build_pmqkd_model(&params(), [0.0; 4]).unwrap();
    let e = m.phase.e_ph.matrix();
    let flip = |s: usize| s ^ 4;
    for s in 0..SUBSPACE_DIM {
        for t in 0..SUBSPACE_DIM {
            assert!(close(e[(s, t)], e[(SUBSPACE_DIM + flip(s), SUBSPACE_DIM + flip(t))], 1e-15));
        }
    }
}

#[test]
fn constraint_counts() {
    let m = build_pmqkd_model(&params(), [0.0; 4]).unwrap();
    assert_eq!(m.constraints.p_ops.len(), 64);
    assert_eq!(m.constraints.q_ops.len(), 4);
    assert_eq!(m.problem.constraints.len(), 68);
    assert_eq!(m.problem.dim(), 24);
    assert_eq!(m.problem.block_sizes(), vec![8, 8, 8]);
}

#[test]
fn honest_state_meets_every_constraint() {
    for (d, pd, pos) in [(0.0, 1e-8, 0.5), (120.0, 1e-6, 0.5), (60.0, 1e-3, 0.3)] {
        let ch = ChannelModel { charlie_position: pos, ..ChannelModel::new(d, pd) };
        let p = params();
        let m = PmQkdModel::new(&p, &ch).unwrap();
        let g = honest_gram(&p, &ch);
        assert!(crate::operator::eigendecompose(&g).unwrap().eigenvalues[0] > -1e-14);
        for c in &m.problem.constraints {
            let v = c.op.inner(&g);
            assert!((v - c.rhs).abs() < 1e-12 * (1.0 + c.rhs.abs()), "{v} vs {}", c.rhs);
        }
    }
}

#[test]
fn honest_phase_error_below_worst_case() {
    let p = params();
    let ch = ChannelModel::new(50.0, 1e-8);
    let m = PmQkdModel::new(&p, &ch).unwrap();
    let honest = m.phase.e_ph.inner(&honest_gram(&p, &ch));
    let worst = solve_primal(&m.problem).unwrap().value;
    assert!(honest <= worst + 1e-9, "{honest} > {worst}");
    let cert = certify(&m).unwrap();
    assert!(cert.bound_value >= worst - 1e-7);
}

#[test]
fn nominal_matches_midpoint_formulas() {
    let p = params();
    let ch = ChannelModel::new(100.0, 1e-6);
    let nom = simulate_channel_nominal(&p, &ch);
    let eta = ch.eta_tot().sqrt();
    let pd = ch.dark_count;
    for (mu, pass, e) in [(p.mu_x, nom.p_pass_x_nom, nom.e_bit_x_nom), (p.mu_y, nom.p_pass_y_nom, nom.e_bit_y_nom)] {
        let x = (-2.0 * eta * mu).exp();
        let joint = x * pd * (1.0 - pd);
        assert!((pass - ((1.0 - pd) * (1.0 - x * (1.0 - pd)) + joint)).abs() < 1e-15);
        assert!((pass * e - joint).abs() < 1e-20, "{} vs {joint}", pass * e);
    }
    let x = p.n_tot * (1.0 - p.p_trash) * p.p_basis0 * p.p_basis0;
    assert!((nom.n_sig_nom - x * p.p_aux0 * nom.p_pass_x_nom).abs() < 1e-3);
    assert!((nom.theta_q_nom[2] - x * p.p_aux1() * nom.p_pass_x_nom).abs() < 1e-3);
}

#[test]
fn observed_counts_normalization_matches_generic_aggregation() {
    let p = params();
    let m = build_pmqkd_model(&p, [0.0; 4]).unwrap();
    // spread counts over keys, then compare aggregated N_l with the per-basis totals
    let mut entries = Vec::new();
    let mut totals = [0.0; 4];
    for e in &m.constraints.beta_coeffs {
        if e.l >= 2 {
            continue;
        }
        let c = (e.key.i * 7 + e.key.y * 3 + e.key.outcome + 1) as f64;
        entries.push(CountEntry { key: e.key, count: c });
        totals[e.l] += c;
    }
    let generic = aggregate_test_counts(&m.instance, &m.constraints.beta_coeffs, &entries).unwrap();
    let obs = ObservedCounts { n_sig: 0.0, n_bit_x: totals[0], n_bit_y: totals[1], n_pass_x: totals[0], n_pass_y: totals[1] };
    let n_l = obs.n_l(&p);
    for l in 0..2 {
        assert!((generic[l] - n_l[l]).abs() < 1e-9 * n_l[l]);
    }
}

#[test]
fn scaled_certificate_verifies_at_target() {
    let p = params();
    let ch = ChannelModel::new(100.0, 1e-8);
    let m = PmQkdModel::new(&p, &ch).unwrap();
    let cert = certify(&m).unwrap();
    let tp = PmQkdParams { p_aux0: 0.6, p_basis0: 0.7, ..p.clone() };
    let tm = PmQkdModel::new(&tp, &ch).unwrap();
    let scaled = scale_certificate(&cert, &p, &tm).unwrap();
    let f = 0.6 * 0.49 / (0.8 * 0.81);
    assert!((scaled.verification.max_eig / cert.verification.max_eig - f).abs() < 1e-6 * f);
    let other = PmQkdParams { mu_x: 0.06, ..tp };
    let om = PmQkdModel::new(&other, &ch).unwrap();
    assert!(scale_certificate(&cert, &p, &om).is_err());
}

#[test]
fn rate_refuses_tampered_certificate() {
    let p = params();
    let ch = ChannelModel::new(50.0, 1e-8);
    let m = PmQkdModel::new(&p, &ch).unwrap();
    let mut cert = certify(&m).unwrap();
    assert!(finite_rate(&m, &ch, &cert, &Counts::Nominal).is_ok());
    cert.lambda.iter_mut().for_each(|l| *l = 0.0);
    assert!(matches!(finite_rate(&m, &ch, &cert, &Counts::Nominal), Err(PmQkdError::Unverified(_))));
}

#[test]
fn trash_expectation_matches_lambda_p() {
    let p = params();
    let ch = ChannelModel::new(50.0, 1e-8);
    let m = PmQkdModel::new(&p, &ch).unwrap();
    let cert = certify(&m).unwrap();
    let spec = rate::trash_spectrum(&m, &cert.lambda).unwrap();
    let total: f64 = spec.iter().map(|s| s.1).sum();
    assert!((total - 1.0).abs() < 1e-10);
    let mean: f64 = spec.iter().map(|(o, p)| o * p).sum();
    let t = trash_statistics(&m, &cert).unwrap();
    assert!((mean - t.lambda_p).abs() < 1e-9 * (1.0 + t.lambda_p.abs()));
    assert!(t.omega_min <= t.omega_max);
}

#[test]
fn finite_rate_below_asymptotic() {
    let p = params();
    let ch = ChannelModel::new(50.0, 1e-8);
    let m = PmQkdModel::new(&p, &ch).unwrap();
    let cert = certify(&m).unwrap();
    let r = finite_rate(&m, &ch, &cert, &Counts::Nominal).unwrap();
    assert!(r.asymptotic_rate > 0.0);
    assert!(r.finite.rate_per_pulse <= r.asymptotic_rate);
    assert_eq!(r.finite.eps_tot, 2f64.powi(-31));
}

#[test]
fn plob_values() {
    assert!(plob_bound(&ChannelModel::new(0.0f64, 0.0)).is_infinite());
    let r = plob_bound(&ChannelModel::new(100.0, 0.0));
    assert!((r - (-(1.0f64 - 0.01).log2())).abs() < 1e-15);
}

#[test]
fn invalid_inputs_rejected() {
    let bad = PmQkdParams { p_trash: 1.0, ..params() };
    assert!(build_pmqkd_model(&bad, [0.0; 4]).is_err());
    let bad = PmQkdParams { mu_x: 0.0, ..params() };
    assert!(bad.validate().is_err());
    assert!(ChannelModel::new(-1.0, 0.0).validate().is_err());
    assert!(ChannelModel::new(1.0, 1.0).validate().is_err());
}

#[test]
fn monte_carlo_guards_and_determinism() {
    let p = PmQkdParams { n_tot: 1e4, budget: EpsilonBudget::uniform(0.05, 2, 2), ..params() };
    let ch = ChannelModel::new(10.0, 1e-6);
    let few = McConfig { trials: 50, seed: 1, source: StateSource::WorstCase };
    assert!(monte_carlo_validate(&p, &ch, &few).is_err());
    let cfg = McConfig { trials: 100, seed: 7, source: StateSource::Honest };
    let a = monte_carlo_validate(&p, &ch, &cfg).unwrap();
    let b = monte_carlo_validate(&p, &ch, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.refused, "ε = 0.05 is below 10/100 trials");
    assert!(a.bounds.iter().all(|b| b.pass.is_none() == !b.measurable));
}
