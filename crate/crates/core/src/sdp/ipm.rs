//! Infeasible primal-dual path-following method (HKM direction, Mehrotra predictor-corrector).
//!
//! Standard form: min ⟨C, X⟩ s.t. ⟨A_i, X⟩ = b_i, X ⪰ 0, with dual
//! max bᵀy s.t. Σ y_i A_i + Z = C, Z ⪰ 0. All matrices are block-diagonal Hermitian.

use serde::{Deserialize, Serialize};

use super::blocks::{self, Blocks, SparseOp};
use crate::linalg::{norm2, spd_cholesky, spd_cholesky_solve};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Residuals<T> {
    pub primal_infeasibility: T,
    pub dual_infeasibility: T,
    pub relative_gap: T,
    pub absolute_gap: T,
}

pub(crate) struct StandardForm<T> {
    pub sizes: Vec<usize>,
    pub c: Blocks<T>,
    pub a: Vec<SparseOp<T>>,
    pub b: Vec<T>,
}

pub(crate) struct IpmOutput<T> {
    pub status: SolverStatus,
    pub x: Blocks<T>,
    pub y: Vec<T>,
    pub z: Blocks<T>,
    pub pobj: T,
    pub dobj: T,
    pub iterations: usize,
    pub residuals: Residuals<T>,
}

pub(crate) struct IpmOptions<T> {
    pub tol: T,
    /// Looser tolerance accepted when progress stalls.
    pub accept_tol: T,
    pub max_iter: usize,
}

pub(crate) fn solve<T: Real>(sf: &StandardForm<T>, opts: &IpmOptions<T>) -> IpmOutput<T> {
    // row scaling to unit Frobenius norm, objective scaled to unit norm
    let row_scale: Vec<T> = sf.a.iter().map(|a| a.frobenius().max(T::lit(1e-300).max(T::min_positive_value()))).collect();
    let a: Vec<SparseOp<T>> = sf.a.iter().zip(&row_scale).map(|(op, s)| op.scaled(T::one() / *s)).collect();
    let b: Vec<T> = sf.b.iter().zip(&row_scale).map(|(v, s)| *v / *s).collect();
    let c_scale = blocks::frobenius(&sf.c).max(T::one());
    let c: Blocks<T> = sf.c.iter().map(|m| m.scale(T::one() / c_scale)).collect();

    let keep = match independent_rows(&sf.sizes, &a, &b) {
        Some(k) => k,
        None => return inconsistent(sf, &c, c_scale),
    };
    let a_kept: Vec<SparseOp<T>> = keep.iter().map(|&i| a[i].clone()).collect();
    let b_kept: Vec<T> = keep.iter().map(|&i| b[i]).collect();
    let out = run(&sf.sizes, &c, &a_kept, &b_kept, opts);
    // dropped rows get a zero multiplier
    let mut y_full = vec![T::zero(); a.len()];
    for (&i, v) in keep.iter().zip(&out.y) {
        y_full[i] = *v;
    }
    // undo scaling: y_i = y'_i·cs/s_i, Z = cs·Z'
    let y = y_full.iter().zip(&row_scale).map(|(v, s)| *v * c_scale / *s).collect::<Vec<_>>();
    let z = out.z.iter().map(|m| m.scale(c_scale)).collect();
    IpmOutput {
        status: out.status,
        pobj: out.pobj * c_scale,
        dobj: out.dobj * c_scale,
        x: out.x,
        y,
        z,
        iterations: out.iterations,
        residuals: out.residuals,
    }
}

/// Greedy selection of linearly independent constraint rows (unit-norm rows assumed), in order.
/// A dependent row must be consistent with the rows it depends on; `None` otherwise.
fn independent_rows<T: Real>(sizes: &[usize], a: &[SparseOp<T>], b: &[T]) -> Option<Vec<usize>> {
    let m = a.len();
    let dense: Vec<Blocks<T>> = a
        .iter()
        .map(|op| {
            let mut d = blocks::zeros(sizes);
            op.add_to(&mut d, T::one());
            d
        })
        .collect();
    let tol = T::lit(1e-10);
    let mut keep: Vec<usize> = Vec::with_capacity(m);
    // rows of L for the kept Gram matrix, built incrementally
    let mut l: Vec<Vec<T>> = Vec::with_capacity(m);
    for i in 0..m {
        let g: Vec<T> = keep.iter().map(|&j| a[i].dot(&dense[j])).collect();
        // forward substitution: L w = g
        let mut w = vec![T::zero(); keep.len()];
        for r in 0..keep.len() {
            let s: T = (0..r).map(|k| l[r][k] * w[k]).sum();
            w[r] = (g[r] - s) / l[r][r];
        }
        let d = a[i].dot(&dense[i]) - w.iter().map(|x| *x * *x).sum::<T>();
        if d > tol {
            let mut row = w;
            row.push(d.sqrt());
            l.push(row);
            keep.push(i);
            continue;
        }
        // A_i ≈ Σ c_j A_j with Lᵀ c = w
        let n = keep.len();
        let mut coef = vec![T::zero(); n];
        for r in (0..n).rev() {
            let s: T = (r + 1..n).map(|k| l[k][r] * coef[k]).sum();
            coef[r] = (w[r] - s) / l[r][r];
        }
        let implied: T = coef.iter().zip(&keep).map(|(c, &j)| *c * b[j]).sum();
        let scale = T::one() + b[i].abs() + coef.iter().zip(&keep).map(|(c, &j)| (*c * b[j]).abs()).sum::<T>();
        if (implied - b[i]).abs() > T::lit(1e-8) * scale {
            return None;
        }
    }
    Some(keep)
}

fn inconsistent<T: Real>(sf: &StandardForm<T>, c: &Blocks<T>, c_scale: T) -> IpmOutput<T> {
    let nan = T::nan();
    IpmOutput {
        status: SolverStatus::PrimalInfeasible,
        x: blocks::zeros(&sf.sizes),
        y: vec![T::zero(); sf.a.len()],
        z: c.iter().map(|m| m.scale(c_scale)).collect(),
        pobj: nan,
        dobj: nan,
        iterations: 0,
        residuals: Residuals { primal_infeasibility: T::infinity(), dual_infeasibility: nan, relative_gap: nan, absolute_gap: nan },
    }
}

fn apply_a<T: Real>(a: &[SparseOp<T>], x: &Blocks<T>) -> Vec<T> {
    a.iter().map(|op| op.dot(x)).collect()
}

fn apply_at<T: Real>(a: &[SparseOp<T>], y: &[T], sizes: &[usize]) -> Blocks<T> {
    let mut out = blocks::zeros(sizes);
    for (op, &v) in a.iter().zip(y) {
        if v != T::zero() {
            op.add_to(&mut out, v);
        }
    }
    out
}

struct Iterate<T> {
    x: Blocks<T>,
    y: Vec<T>,
    z: Blocks<T>,
}

fn run<T: Real>(sizes: &[usize], c: &Blocks<T>, a: &[SparseOp<T>], b: &[T], opts: &IpmOptions<T>) -> IpmOutput<T> {
    let m = a.len();
    let n: usize = sizes.iter().sum();
    let nt = T::from_count(n);
    let norm_b = norm2(b);
    let norm_c = blocks::frobenius(c);

    let mut xi = T::lit(10.0).max(nt.sqrt());
    for &bi in b {
        xi = xi.max(nt * (T::one() + bi.abs()) / T::lit(2.0));
    }
    let zeta = T::lit(10.0).max(nt.sqrt()).max(norm_c);
    let mut it = Iterate { x: blocks::identity(sizes, xi), y: vec![T::zero(); m], z: blocks::identity(sizes, zeta) };

    let mut best: Option<(T, Iterate<T>, Residuals<T>, T, T)> = None;
    let mut stall = 0usize;
    let mut status = SolverStatus::IterationLimit;
    let mut iterations = 0;

    let mut last = None;
    for iter in 0..=opts.max_iter {
        iterations = iter;
        let ax = apply_a(a, &it.x);
        let rp: Vec<T> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
        let aty = apply_at(a, &it.y, sizes);
        let rd = blocks::sub(&blocks::sub(c, &it.z), &aty);
        let pobj = blocks::inner(c, &it.x);
        let dobj: T = b.iter().zip(&it.y).map(|(p, q)| *p * *q).sum();
        let gap = blocks::inner(&it.x, &it.z);
        let res = Residuals {
            primal_infeasibility: norm2(&rp) / (T::one() + norm_b),
            dual_infeasibility: blocks::frobenius(&rd) / (T::one() + norm_c),
            relative_gap: gap.abs() / (T::one() + pobj.abs() + dobj.abs()),
            absolute_gap: gap,
        };
        let merit = res.primal_infeasibility.max(res.dual_infeasibility).max(res.relative_gap);
        if !merit.is_finite() {
            status = SolverStatus::NumericalFailure;
            break;
        }
        let improved = best.as_ref().map_or(true, |bst| merit < bst.0 * T::lit(0.9));
        if improved {
            stall = 0;
        } else {
            stall += 1;
        }
        if best.as_ref().map_or(true, |bst| merit < bst.0) {
            best = Some((
                merit,
                Iterate { x: it.x.clone(), y: it.y.clone(), z: it.z.clone() },
                res.clone(),
                pobj,
                dobj,
            ));
        }
        if merit <= opts.tol {
            status = SolverStatus::Optimal;
            last = Some((res, pobj, dobj));
            break;
        }
        // infeasibility certificates from diverging iterates
        let big = T::lit(1e8);
        if dobj > big * (T::one() + norm_c + blocks::frobenius(&rd)) && res.dual_infeasibility < T::lit(1e-6) {
            status = SolverStatus::PrimalInfeasible;
            last = Some((res, pobj, dobj));
            break;
        }
        if -pobj > big * (T::one() + norm_b + norm2(&rp)) && res.primal_infeasibility < T::lit(1e-6) {
            status = SolverStatus::DualInfeasible;
            last = Some((res, pobj, dobj));
            break;
        }
        if iter == opts.max_iter || stall >= 12 {
            break;
        }

        let Some(zinv) = blocks::inverse(&it.z) else {
            status = SolverStatus::NumericalFailure;
            break;
        };
        // Schur complement M_ij = Re tr(A_i X A_j Z⁻¹)
        let w: Vec<Blocks<T>> = a.iter().map(|aj| aj.sandwich(&it.x, &zinv)).collect();
        let mut schur = vec![T::zero(); m * m];
        for i in 0..m {
            for j in i..m {
                let v = a[i].dot(&w[j]);
                schur[i * m + j] = v;
                schur[j * m + i] = v;
            }
        }
        let diag_max = (0..m).map(|i| schur[i * m + i].abs()).fold(T::zero(), T::max);
        let chol = match spd_cholesky(&schur, m) {
            Some(l) => l,
            None => {
                let mut reg = schur.clone();
                let shift = diag_max * T::epsilon() * T::lit(1e3) + T::min_positive_value();
                for i in 0..m {
                    reg[i * m + i] += shift;
                }
                match spd_cholesky(&reg, m) {
                    Some(l) => l,
                    None => {
                        status = SolverStatus::NumericalFailure;
                        break;
                    }
                }
            }
        };

        let x_rd_zinv = blocks::matmul(&blocks::matmul(&it.x, &rd), &zinv);
        let mu = gap / nt;

        // direction for a given Rc·Z⁻¹ term
        let direction = |rc_zinv: &Blocks<T>| -> (Blocks<T>, Vec<T>, Blocks<T>) {
            let h = blocks::sym(&blocks::sub(rc_zinv, &x_rd_zinv));
            let ah = apply_a(a, &h);
            let rhs: Vec<T> = rp.iter().zip(&ah).map(|(p, q)| *p - *q).collect();
            let dy = spd_cholesky_solve(&chol, m, &rhs);
            let dz = blocks::sub(&rd, &apply_at(a, &dy, sizes));
            let xdz = blocks::matmul(&blocks::matmul(&it.x, &dz), &zinv);
            let dx = blocks::sym(&blocks::sub(rc_zinv, &xdz));
            (dx, dy, dz)
        };

        // predictor
        let neg_x: Blocks<T> = it.x.iter().map(|m| m.scale(-T::one())).collect();
        let (dx_a, _dy_a, dz_a) = direction(&neg_x);
        let ap = blocks::max_step(&it.x, &dx_a).min(T::one());
        let ad = blocks::max_step(&it.z, &dz_a).min(T::one());
        let mut x_aff = it.x.clone();
        blocks::axpy(&mut x_aff, ap, &dx_a);
        let mut z_aff = it.z.clone();
        blocks::axpy(&mut z_aff, ad, &dz_a);
        let mu_aff = blocks::inner(&x_aff, &z_aff) / nt;
        let expo = T::lit(3.0).max(T::lit(3.0) * ap.min(ad).powi(2)).min(T::lit(3.0));
        let sigma = (mu_aff / mu).max(T::zero()).powf(expo).min(T::one());

        // corrector: Rc Z⁻¹ = σμ Z⁻¹ − X − ΔX_a ΔZ_a Z⁻¹
        let mut rc_zinv: Blocks<T> = zinv.iter().map(|m| m.scale(sigma * mu)).collect();
        blocks::axpy(&mut rc_zinv, -T::one(), &it.x);
        let second = blocks::matmul(&blocks::matmul(&dx_a, &dz_a), &zinv);
        blocks::axpy(&mut rc_zinv, -T::one(), &second);
        let (dx, dy, dz) = direction(&rc_zinv);

        let gamma = T::lit(0.9) + T::lit(0.09) * ap.min(ad);
        let sp = (gamma * blocks::max_step(&it.x, &dx)).min(T::one());
        let sd = (gamma * blocks::max_step(&it.z, &dz)).min(T::one());
        if sp <= T::zero() && sd <= T::zero() {
            status = SolverStatus::NumericalFailure;
            break;
        }
        blocks::axpy(&mut it.x, sp, &dx);
        for (yi, di) in it.y.iter_mut().zip(&dy) {
            *yi += sd * *di;
        }
        blocks::axpy(&mut it.z, sd, &dz);
        it.x = blocks::sym(&it.x);
        it.z = blocks::sym(&it.z);
    }

    match (status, last) {
        (SolverStatus::Optimal | SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible, Some((res, p, d))) => {
            IpmOutput { status, x: it.x, y: it.y, z: it.z, pobj: p, dobj: d, iterations, residuals: res }
        }
        _ => {
            let (merit, bi, res, p, d) = best.expect("at least one iterate evaluated");
            let status = if merit <= opts.accept_tol { SolverStatus::Optimal } else { status };
            IpmOutput { status, x: bi.x, y: bi.y, z: bi.z, pobj: p, dobj: d, iterations, residuals: res }
        }
    }
}
