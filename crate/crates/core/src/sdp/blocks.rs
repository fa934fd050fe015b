//! Block-diagonal matrices and sparse constraint operators used inside the solver.

use crate::linalg::{CMatrix, C};
use crate::operator::eigendecompose_matrix;
use crate::scalar::Real;

pub(crate) type Blocks<T> = Vec<CMatrix<T>>;

pub(crate) fn identity<T: Real>(sizes: &[usize], s: T) -> Blocks<T> {
    sizes.iter().map(|&n| CMatrix::identity(n).scale(s)).collect()
}

pub(crate) fn zeros<T: Real>(sizes: &[usize]) -> Blocks<T> {
    sizes.iter().map(|&n| CMatrix::zeros(n, n)).collect()
}

pub(crate) fn inner<T: Real>(a: &Blocks<T>, b: &Blocks<T>) -> T {
    a.iter().zip(b).map(|(x, y)| x.inner(y)).sum()
}

pub(crate) fn frobenius<T: Real>(a: &Blocks<T>) -> T {
    a.iter().map(|x| x.frobenius().powi(2)).sum::<T>().sqrt()
}

pub(crate) fn axpy<T: Real>(y: &mut Blocks<T>, s: T, x: &Blocks<T>) {
    for (a, b) in y.iter_mut().zip(x) {
        a.axpy(s, b);
    }
}

pub(crate) fn sub<T: Real>(a: &Blocks<T>, b: &Blocks<T>) -> Blocks<T> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn matmul<T: Real>(a: &Blocks<T>, b: &Blocks<T>) -> Blocks<T> {
    a.iter().zip(b).map(|(x, y)| x.matmul(y)).collect()
}

pub(crate) fn sym<T: Real>(a: &Blocks<T>) -> Blocks<T> {
    a.iter().map(|x| x.hermitian_part()).collect()
}

pub(crate) fn inverse<T: Real>(a: &Blocks<T>) -> Option<Blocks<T>> {
    a.iter().map(|x| x.hpd_inverse()).collect()
}

/// Largest α with `x + α d ⪰ 0` (infinite when `d ⪰ 0`); zero when `x` is not positive definite.
pub(crate) fn max_step<T: Real>(x: &Blocks<T>, d: &Blocks<T>) -> T {
    let mut lam_min = T::infinity();
    for (xb, db) in x.iter().zip(d) {
        let Some(l) = xb.cholesky() else { return T::zero() };
        let li = l.lower_inverse();
        let m = li.matmul(db).matmul(&li.adjoint()).hermitian_part();
        let lo = match eigendecompose_matrix(&m, T::epsilon(), 100) {
            Ok(es) => es.eigenvalues[0],
            Err(_) => return T::zero(),
        };
        lam_min = lam_min.min(lo);
    }
    if lam_min >= T::zero() {
        T::infinity()
    } else {
        -T::one() / lam_min
    }
}

/// Nonzero entries `(block, row, col, value)` of a block-diagonal Hermitian operator.
#[derive(Clone, Debug)]
pub(crate) struct SparseOp<T> {
    pub entries: Vec<(usize, usize, usize, C<T>)>,
}

impl<T: Real> SparseOp<T> {
    pub fn from_blocks(b: &Blocks<T>) -> Self {
        let mut entries = Vec::new();
        for (k, m) in b.iter().enumerate() {
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let v = m[(r, c)];
                    if v.re != T::zero() || v.im != T::zero() {
                        entries.push((k, r, c, v));
                    }
                }
            }
        }
        Self { entries }
    }

    /// Re tr(A X)
    pub fn dot(&self, x: &Blocks<T>) -> T {
        self.entries.iter().map(|&(k, r, c, v)| (v * x[k][(c, r)]).re).sum()
    }

    pub fn add_to(&self, y: &mut Blocks<T>, s: T) {
        for &(k, r, c, v) in &self.entries {
            y[k][(r, c)] += v * s;
        }
    }

    pub fn frobenius(&self) -> T {
        self.entries.iter().map(|e| e.3.norm_sqr()).sum::<T>().sqrt()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { entries: self.entries.iter().map(|&(k, r, c, v)| (k, r, c, v * s)).collect() }
    }

    /// X · A · Y for block-diagonal X, Y.
    pub fn sandwich(&self, x: &Blocks<T>, y: &Blocks<T>) -> Blocks<T> {
        let mut out: Blocks<T> = x.iter().map(|m| CMatrix::zeros(m.rows(), m.cols())).collect();
        for &(k, r, c, v) in &self.entries {
            let (xb, yb) = (&x[k], &y[k]);
            let n = xb.rows();
            let ob = &mut out[k];
            for i in 0..n {
                let xv = xb[(i, r)] * v;
                if xv.re == T::zero() && xv.im == T::zero() {
                    continue;
                }
                for j in 0..n {
                    ob[(i, j)] += xv * yb[(c, j)];
                }
            }
        }
        out
    }
}
