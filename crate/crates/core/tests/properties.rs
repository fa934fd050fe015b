mod oracle;

use num_complex::Complex;
use pmqkd_core::concentration::{
    bernstein_delta, bernstein_log_tail, delta_ph, kato_delta, kato_optimal_params, Direction as Side, EpsilonBudget,
};
use pmqkd_core::finite_key::{binary_entropy, eps_pa, key_length, FiniteKeyInputs};
use pmqkd_core::linalg::CMatrix;
use pmqkd_core::operator::{coherent_overlap, eigendecompose, tensor_product, HermitianOperator};
use pmqkd_core::pmqkd::{
    build_pmqkd_model, certify, optimize_parameters, simulate_channel_nominal, SearchSpec, ChannelModel, PmQkdModel, PmQkdParams,
};
use pmqkd_core::protocol::{build_observation_constraints, elementary_observation, renormalize_with, BetaEntry, Direction, OutcomeKey};
use pmqkd_core::sdp::{default_margin, ConstraintFamily, linear_bound, solve_dual_with_margin, solve_primal};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hermitian(seed: u64, n: usize) -> HermitianOperator<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = CMatrix::from_fn(n, n, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    HermitianOperator::new(m.hermitian_part()).unwrap()
}

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

fn params_strategy() -> impl Strategy<Value = PmQkdParams<f64>> {
    (1e-3f64..0.5, 1e-2f64..1.0, 0.5f64..0.98, 0.5f64..0.98, 0.01f64..0.5)
        .prop_map(|(mu_x, mu_y, p_basis0, p_aux0, p_trash)| PmQkdParams { mu_x, mu_y, p_basis0, p_aux0, p_trash, ..params() })
}

fn channel_strategy() -> impl Strategy<Value = ChannelModel<f64>> {
    (0.0f64..400.0, -9.0f64..-4.0, 0.3f64..0.7, 0.5f64..=1.0).prop_map(|(d, lpd, pos, eff)| ChannelModel {
        charlie_position: pos,
        detector_efficiency: eff,
        ..ChannelModel::new(d, 10f64.powf(lpd))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tensor_trace_factorizes(sa in any::<u64>(), sb in any::<u64>(), n in 1usize..5, m in 1usize..5) {
        let (a, b) = (hermitian(sa, n), hermitian(sb, m));
        let t = tensor_product(&a, &b).unwrap().trace();
        let want = a.trace() * b.trace();
        prop_assert!((t - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn coherent_overlap_is_conjugate_symmetric(ar in -3.0f64..3.0, ai in -3.0f64..3.0, br in -3.0f64..3.0, bi in -3.0f64..3.0) {
        let (a, b) = (Complex::new(ar, ai), Complex::new(br, bi));
        prop_assert_eq!(coherent_overlap(a, b), coherent_overlap(b, a).conj());
    }

    #[test]
    fn renormalization_round_trip(seed in any::<u64>(), d in 1usize..5, t in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let w: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.gen_range(-6.0..0.0))).collect();
        let op = hermitian(seed, d * t);
        let f = renormalize_with(&op, &w, t, Direction::Forward).unwrap();
        let back = renormalize_with(&f, &w, t, Direction::Inverse).unwrap();
        prop_assert!((back.matrix() - op.matrix()).max_abs() <= 1e-12 * (1.0 + op.matrix().max_abs()));
    }

    #[test]
    fn kato_delta_recomputes(n in 1e2f64..1e12, r in 0.01f64..0.99, rx in 0.0f64..=1.0, le in -40.0f64..0.0) {
        let eps = 10f64.powf(le);
        let p = kato_optimal_params(n, r * n, eps, Side::Lower).unwrap();
        let x = rx * n;
        let d = kato_delta(&p, x);
        let again = (p.b + p.a * (2.0 * x / n - 1.0)) * n.sqrt();
        prop_assert!((d - again).abs() <= 1e-12 * d.abs().max(p.b * n.sqrt()));
    }

    #[test]
    fn bernstein_recomputes(n in 1.0f64..1e13, m in 1e-3f64..1e3, frac in 1e-6f64..1.0, le in -40.0f64..-1e-3) {
        let (e, eps) = (frac * m * m, 10f64.powf(le));
        let d = bernstein_delta(n, m, e, eps).unwrap();
        let tail = bernstein_log_tail(n, m, e, d);
        prop_assert!((tail / eps.ln() - 1.0).abs() <= 1e-10, "{tail} vs {}", eps.ln());
    }

    #[test]
    fn deviations_monotone_in_eps_and_n(n in 1e4f64..1e12, r in 0.01f64..0.99, le in -40.0f64..-1.0) {
        let eps = 10f64.powf(le);
        let at = |n: f64, eps: f64| delta_ph(n, r * n, r * n, eps).unwrap();
        let base = at(n, eps);
        prop_assert!(at(n, eps * 10.0) <= base * (1.0 + 1e-12));
        prop_assert!(at(n * 10.0, eps) >= base * (1.0 - 1e-12));
        let bern = |n: f64, eps: f64| bernstein_delta(n, 2.0, 0.3, eps).unwrap();
        prop_assert!(bern(n, eps * 10.0) <= bern(n, eps));
        prop_assert!(bern(n * 10.0, eps) >= bern(n, eps));
    }

    #[test]
    fn eps_pa_bitwise(k in 1i32..200, s in 1u32..200) {
        let b = EpsilonBudget::<f64> { eps_ph: 2f64.powi(-k), s_pa: s, ..EpsilonBudget::default() };
        prop_assert_eq!(eps_pa(&b).to_bits(), (2.0 * (2f64.powi(-k) + 2f64.powi(-(s as i32)))).sqrt().to_bits());
    }

    #[test]
    fn nominal_values_are_probabilities(p in params_strategy(), ch in channel_strategy()) {
        let nom = simulate_channel_nominal(&p, &ch);
        for q in nom.q_nom() {
            prop_assert!((0.0..=1.0).contains(&q), "{q}");
        }
        prop_assert!(nom.e_bit_x_nom * nom.p_pass_x_nom <= nom.p_pass_x_nom);
        prop_assert!(nom.e_bit_y_nom * nom.p_pass_y_nom <= nom.p_pass_y_nom);
        let q = nom.q_nom();
        prop_assert!(q[0] <= q[2] && q[1] <= q[3]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Weak duality at q^nom and dominance of the linear bound for perturbed observations.
    #[test]
    fn linear_bound_dominates_primal(p in params_strategy(), d in 0.0f64..300.0, seed in any::<u64>()) {
        let ch = ChannelModel::new(d, 1e-8);
        let model = PmQkdModel::new(&p, &ch).unwrap();
        let Ok(cert) = certify(&model) else { return Ok(()) };
        let (pv, qn) = (model.problem.p_vals(), model.problem.q_vals());
        if let Ok(s) = solve_primal(&model.problem) {
            prop_assert!(linear_bound(&cert, &pv, &qn) >= s.value - 1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = qn.iter().map(|v| v * (1.0 + rng.gen_range(-0.1..=0.1))).collect();
        if let Ok(s) = solve_primal(&model.problem.with_observations(&q).unwrap()) {
            prop_assert!(linear_bound(&cert, &pv, &q) >= s.value - 1e-6);
        }
    }

    /// A certificate solved with margin δ is accepted under any radius up to δ.
    #[test]
    fn margin_covers_smaller_radii(p in params_strategy(), d in 0.0f64..300.0, k in 0.0f64..3.0) {
        let model = PmQkdModel::new(&p, &ChannelModel::new(d, 1e-8)).unwrap();
        let delta = default_margin(&model.problem).unwrap() * 10f64.powf(k);
        let Ok(cert) = solve_dual_with_margin(&model.problem, delta) else { return Ok(()) };
        let slack = 1e-3 * delta;
        for frac in [0.0, 0.25, 0.5, 0.9] {
            prop_assert!(cert.verification.max_eig + frac * delta <= slack, "λ_max = {:e}, δ = {delta:e}", cert.verification.max_eig);
        }
    }
}

#[test]
fn eigendecomposition_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..1000 {
        let n = rng.gen_range(1..=32);
        let a = hermitian(k, n);
        let es = eigendecompose(&a).unwrap();
        let err = (&es.reconstruct() - a.matrix()).max_abs();
        assert!(err <= 1e-10 * (1.0 + a.matrix().max_abs()), "dim {n}: {err:e}");
    }
}

#[test]
fn indicator_beta_reproduces_elementary_observation() {
    let m = build_pmqkd_model(&params(), [0.0; 4]).unwrap();
    let inst = &m.instance;
    for i in 0..inst.d_a {
        for y in 0..inst.d_b {
            for outcome in 0..inst.announcement_dim {
                let key = OutcomeKey { i, y, outcome };
                let q = build_observation_constraints(inst, &[BetaEntry { l: 0, key, coeff: 1.0 }]).unwrap();
                assert_eq!(q[0].matrix(), elementary_observation(inst, key).unwrap().matrix());
            }
        }
    }
}

/// Every operator is block diagonal over ξ and the ξ = 2 phase-error block vanishes. For Ê_ph and
/// the Q̂_l the ξ = 1 block is the ξ = 0 block conjugated by X on Bob's key bit; the Gram
/// constraints repeat one block.
#[test]
fn pmqkd_operators_share_announcement_symmetry() {
    let model = PmQkdModel::new(&params(), &ChannelModel::new(80.0, 1e-8)).unwrap();
    let p = &model.problem;
    let labels = p.block_structure();
    assert_eq!(labels.len(), 3);
    let d = labels[0].len;
    // the subspace index s = κ_a + 2π + 4κ_b, so X on κ_b flips bit 2
    let flip = CMatrix::from_fn(d, d, |r, c| if r == (c ^ 4) { Complex::new(1.0, 0.0) } else { Complex::new(0.0, 0.0) });
    let mut ops = vec![(p.objective.matrix().clone(), true)];
    ops.extend(p.constraints.iter().map(|c| (c.op.matrix().clone(), c.family == ConstraintFamily::Observation)));
    for (k, (m, flipped)) in ops.iter().enumerate() {
        for (i, a) in labels.iter().enumerate() {
            for b in labels.iter().skip(i + 1) {
                assert_eq!(m.sub_block(a.start, b.start, a.len, b.len).max_abs(), 0.0, "operator {k} couples blocks");
            }
        }
        let b0 = m.sub_block(labels[0].start, labels[0].start, d, d);
        let b1 = m.sub_block(labels[1].start, labels[1].start, d, d);
        let want = if *flipped { flip.matmul(&b0).matmul(&flip.adjoint()) } else { b0.clone() };
        assert!((&want - &b1).max_abs() <= 1e-12 * (1.0 + b0.max_abs()), "operator {k}");
    }
    let e2 = p.objective.matrix().sub_block(labels[2].start, labels[2].start, d, d);
    assert_eq!(e2.max_abs(), 0.0);
}

#[test]
fn primal_optimizer_respects_blocks() {
    let model = PmQkdModel::new(&params(), &ChannelModel::new(60.0, 1e-8)).unwrap();
    let g = solve_primal(&model.problem).unwrap().g;
    let labels = model.problem.block_structure();
    for (i, a) in labels.iter().enumerate() {
        for b in labels.iter().skip(i + 1) {
            assert!(g.matrix().sub_block(a.start, b.start, a.len, b.len).max_abs() <= 1e-8);
        }
    }
}

#[test]
fn key_length_monotone_scans() {
    let model = PmQkdModel::new(&params(), &ChannelModel::new(50.0, 1e-8)).unwrap();
    let cert = certify(&model).unwrap();
    let inputs = |n_sig: f64| FiniteKeyInputs {
        n_tot: 1e12,
        n_sig,
        n_l: vec![0.0; cert.eta.len()],
        certificate: cert.clone(),
        p_vals: model.constraints.p_vals.clone(),
        p_trash: 0.1,
        budget: EpsilonBudget::default(),
        f_ec: 1.1,
        e_bit: 0.01,
    };
    let base = inputs(1e9);
    let mut last = f64::INFINITY;
    for k in 0..=60 {
        let m = 1e9 * k as f64 / 100.0;
        let kl = key_length(&base, m).unwrap().key_length;
        assert!(kl <= last);
        last = kl;
    }
    let mut last = 0.0;
    for k in 1..=60 {
        let n_sig = 1e8 * k as f64;
        let kl = key_length(&inputs(n_sig), 1e7).unwrap().key_length;
        assert!(kl >= last, "n_sig = {n_sig}");
        last = kl;
    }
    assert!(binary_entropy(0.5f64).unwrap() == 1.0);
}

/// Fitted slope of log R against log η_tot for optimized parameters at N = 10¹². A slope below 1
/// is what lets the rate cross the linear bound; it stays above the ideal 1/2 because the
/// phase-error bound tightens only as μ_X shrinks with loss.
#[test]
fn rate_slope_lies_between_square_root_and_linear() {
    let base = params();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for d in [100.0, 150.0, 200.0, 250.0, 300.0] {
        let ch = ChannelModel::new(d, 1e-8);
        let o = optimize_parameters(&base, &ch, &SearchSpec::default()).unwrap();
        xs.push(ch.eta_tot().ln());
        ys.push(o.report.finite.rate_per_pulse.ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = cov / var;
    eprintln!("fitted slope {slope:.4}");
    assert!(slope > 0.5 && slope < 1.0, "slope {slope}");
}

#[test]
fn oracle_jacobi_matches_library() {
    for seed in 0..50 {
        let a = hermitian(seed, 1 + (seed as usize % 8));
        let ours = eigendecompose(&a).unwrap().eigenvalues;
        let theirs = oracle::hermitian_eigenvalues(a.matrix());
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
