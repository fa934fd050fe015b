//! Reference computations written independently of the library code paths they check.
#![allow(dead_code)]

use pmqkd_core::concentration::{Direction, KatoParams};
use pmqkd_core::linalg::CMatrix;

/// Cyclic Jacobi on a dense real symmetric matrix (row-major); eigenvalues ascending.
pub fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i].powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a Hermitian matrix via the real embedding [[Re, −Im], [Im, Re]], in which
/// every eigenvalue appears twice.
pub fn hermitian_eigenvalues(h: &CMatrix<f64>) -> Vec<f64> {
    let n = h.rows();
    let m = 2 * n;
    let mut a = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            a[i * m + j] = z.re;
            a[(i + n) * m + j + n] = z.re;
            a[i * m + j + n] = -z.im;
            a[(i + n) * m + j] = z.im;
        }
    }
    symmetric_eigenvalues(a, m).into_iter().step_by(2).collect()
}

pub fn lambda_max(h: &CMatrix<f64>) -> f64 {
    *hermitian_eigenvalues(h).last().expect("nonempty matrix")
}

/// |exp(−(2b² − 2a²)/(1 + 4a/(3√n))²)/ε − 1| in the lower-direction convention.
pub fn kato_residual(p: &KatoParams<f64>) -> f64 {
    let a = match p.direction {
        Direction::Lower => p.a,
        Direction::Upper => -p.a,
    };
    let s = 1.0 + 4.0 * a / (3.0 * p.n.sqrt());
    let log = -2.0 * (p.b - a) * (p.b + a) / (s * s);
    (log - p.epsilon.ln()).exp_m1().abs()
}

/// a₀* as printed, with b from the constraint solved for b.
pub fn kato_printed_optimum(n: f64, x: f64, eps: f64) -> (f64, f64) {
    let l = eps.ln();
    let d = 9.0 * x * (n - x) - 2.0 * n * l;
    let a = (27.0 * 2f64.sqrt() * (n - 2.0 * x) * (-n * n * l * d).sqrt() + 216.0 * n.sqrt() * x * (n - x) * l
        - 48.0 * n.powf(1.5) * l * l)
        / (4.0 * (9.0 * n - 8.0 * l) * d);
    let b = (18.0 * a * a * n - (16.0 * a * a + 24.0 * a * n.sqrt() + 9.0 * n) * l).sqrt() / (3.0 * (2.0 * n).sqrt());
    (a, b)
}

fn kato_objective(n: f64, x: f64, l: f64, a: f64) -> f64 {
    let s = 1.0 + 4.0 * a / (3.0 * n.sqrt());
    let b = (a * a - l / 2.0 * s * s).max(0.0).sqrt();
    b + a * (2.0 * x / n - 1.0)
}

/// Smallest objective b + a(2x/n − 1) over a dense grid of feasible a, zooming in on the best
/// grid point. b is fixed by the constraint, so every grid point is feasible.
pub fn kato_grid_minimum(n: f64, x: f64, eps: f64) -> f64 {
    let l = eps.ln();
    let scale = (-l).sqrt() + n.sqrt().min(1e3) + 1.0;
    let (mut lo, mut hi) = (-20.0 * scale, 20.0 * scale);
    let mut best = (f64::INFINITY, 0.0);
    for pts in [40_001usize, 2001, 2001, 2001, 2001] {
        let h = (hi - lo) / (pts - 1) as f64;
        for k in 0..pts {
            let a = lo + h * k as f64;
            let f = kato_objective(n, x, l, a);
            if f < best.0 {
                best = (f, a);
            }
        }
        lo = best.1 - 2.0 * h;
        hi = best.1 + 2.0 * h;
    }
    best.0
}

/// Golden-section minimum of a convex function on [lo, hi]; returns (argmin, min).
fn golden(mut lo: f64, mut hi: f64, f: &mut dyn FnMut(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-11 * (1.0 + lo.abs().max(hi.abs())) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Optimal value of max ⟨C, G⟩ s.t. tr G = 1, ⟨A_i, G⟩ = b_i, G ⪰ 0, computed on the dual side:
/// min over y of λ_max(C − Σ y_i A_i) + Σ y_i b_i, a convex function of at most two variables,
/// minimized by nested golden-section search. The search box grows until the optimum is interior.
pub fn sdp_dual_brute_force(c: &CMatrix<f64>, ops: &[CMatrix<f64>], b: &[f64]) -> f64 {
    let dual = |y: &[f64]| {
        let mut m = c.clone();
        for (a, yi) in ops.iter().zip(y) {
            m.axpy(-yi, a);
        }
        lambda_max(&m) + y.iter().zip(b).map(|(y, b)| y * b).sum::<f64>()
    };
    let mut bound = 20.0;
    loop {
        let (arg, val): (Vec<f64>, f64) = match ops.len() {
            0 => (vec![], dual(&[])),
            1 => {
                let (y, v) = golden(-bound, bound, &mut |y| dual(&[y]));
                (vec![y], v)
            }
            2 => {
                let (y1, v) = golden(-bound, bound, &mut |y1| golden(-bound, bound, &mut |y2| dual(&[y1, y2])).1);
                let (y2, _) = golden(-bound, bound, &mut |y2| dual(&[y1, y2]));
                (vec![y1, y2], v)
            }
            _ => panic!("at most two non-trace constraints"),
        };
        if arg.iter().all(|y| y.abs() < 0.99 * bound) || bound > 1e6 {
            return val;
        }
        bound *= 8.0;
    }
}
