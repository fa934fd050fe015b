//! Small dense complex matrices and the factorizations the solver needs.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub type C<T> = Complex<T>;

/// Row-major square-or-rectangular complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C::new(T::zero(), T::zero()); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = C::new(x, T::zero());
        }
        m
    }

    /// Builds from row-major entries. Panics if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C<T>>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_c(&self, s: C<T>) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn trace(&self) -> C<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).fold(C::new(T::zero(), T::zero()), |a, b| a + b)
    }

    /// tr(self · other) without forming the product.
    pub fn trace_product(&self, other: &Self) -> C<T> {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.rows, other.cols);
        let mut acc = C::new(T::zero(), T::zero());
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * other[(k, i)];
            }
        }
        acc
    }

    /// Re tr(self · other) for Hermitian arguments; this is the real inner product ⟨A, B⟩.
    pub fn inner(&self, other: &Self) -> T {
        self.trace_product(other).re
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter().zip(v).fold(C::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        Self::from_fn(r, c, |i, j| {
            let (i1, i2) = (i / other.rows, i % other.rows);
            let (j1, j2) = (j / other.cols, j % other.cols);
            self[(i1, j1)] * other[(i2, j2)]
        })
    }

    /// (A + A†)/2
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)].conj()) * T::lit(0.5))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }

    /// Largest |A_ij − conj(A_ji)|.
    pub fn hermiticity_defect(&self) -> T {
        let mut d = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                d = d.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        d
    }

    pub fn sub_block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Self) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
    pub fn cholesky(&self) -> Option<Self> {
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l[(j, j)] = C::new(dj, T::zero());
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / dj;
            }
        }
        Some(l)
    }

    /// Inverse of a lower-triangular matrix.
    pub fn lower_inverse(&self) -> Self {
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        for j in 0..n {
            inv[(j, j)] = C::new(T::one(), T::zero()) / self[(j, j)];
            for i in (j + 1)..n {
                let mut s = C::new(T::zero(), T::zero());
                for k in j..i {
                    s += self[(i, k)] * inv[(k, j)];
                }
                inv[(i, j)] = -s / self[(i, i)];
            }
        }
        inv
    }

    /// Inverse of a Hermitian positive-definite matrix via Cholesky.
    pub fn hpd_inverse(&self) -> Option<Self> {
        let l = self.cholesky()?;
        let li = l.lower_inverse();
        Some(li.adjoint().matmul(&li))
    }
}

impl<T: Real> Index<(usize, usize)> for CMatrix<T> {
    type Output = C<T>;
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.cols + j]
    }
}

impl<'a, T: Real> Add for &'a CMatrix<T> {
    type Output = CMatrix<T>;
    fn add(self, rhs: Self) -> CMatrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl<'a, T: Real> Sub for &'a CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: Self) -> CMatrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl<'a, T: Real> Mul for &'a CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: Self) -> CMatrix<T> {
        self.matmul(rhs)
    }
}

/// Solves `M x = r` for a symmetric positive-definite real matrix stored row-major.
/// Returns `None` when the factorization breaks down.
pub fn spd_solve<T: Real>(m: &[T], n: usize, r: &[T]) -> Option<Vec<T>> {
    let l = spd_cholesky(m, n)?;
    Some(spd_cholesky_solve(&l, n, r))
}

pub fn spd_cholesky<T: Real>(m: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    Some(l)
}

pub fn spd_cholesky_solve<T: Real>(l: &[T], n: usize, r: &[T]) -> Vec<T> {
    let mut y = r.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

pub fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

pub fn cnorm2<T: Real>(v: &[C<T>]) -> T {
    v.iter().map(|x| x.norm_sqr()).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C<f64> {
        C::new(re, im)
    }

    #[test]
    fn cholesky_inverse_roundtrip() {
        let a = CMatrix::from_vec(2, 2, vec![c(4.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)]);
        let inv = a.hpd_inverse().unwrap();
        let id = a.matmul(&inv);
        assert!((&id - &CMatrix::identity(2)).max_abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CMatrix::<f64>::from_real_diag(&[1.0, -1.0]);
        assert!(a.cholesky().is_none());
    }

    #[test]
    fn kron_shape() {
        let a = CMatrix::<f64>::identity(2);
        let b = CMatrix::<f64>::from_real_diag(&[1.0, 2.0, 3.0]);
        let k = a.kron(&b);
        assert_eq!(k.rows(), 6);
        assert_eq!(k[(4, 4)], c(2.0, 0.0));
    }

    #[test]
    fn spd_solve_small() {
        let m = [4.0f64, 1.0, 1.0, 3.0];
        let x = spd_solve(&m, 2, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
    }
}
