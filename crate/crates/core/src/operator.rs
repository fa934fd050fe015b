//! Hermitian operators, tensor products, eigendecomposition and coherent-state overlaps.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMatrix, C};
use crate::scalar::{Real, Tolerances};

/// Largest operator dimension accepted by [`tensor_product`].
pub const DEFAULT_MAX_DIM: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("matrix is not Hermitian (max defect {defect:e})")]
    NotHermitian { defect: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {dim} exceeds the configured maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NonConvergence { sweeps: usize, off_norm: f64 },
    #[error("invalid block structure: {0}")]
    BlockStructure(String),
}

/// Contiguous diagonal block carrying a classical-register label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLabel {
    pub label: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct HermitianOperator<T> {
    matrix: CMatrix<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blocks: Option<Vec<BlockLabel>>,
}

impl<T: Real> HermitianOperator<T> {
    /// Validates Hermiticity (1e-12 absolute per entry in double precision) and stores the exact
    /// Hermitian part.
    pub fn new(matrix: CMatrix<T>) -> Result<Self, OperatorError> {
        Self::with_tolerance(matrix, Tolerances::<T>::default().hermitian)
    }

    pub fn with_tolerance(matrix: CMatrix<T>, tol: T) -> Result<Self, OperatorError> {
        if !matrix.is_square() {
            return Err(OperatorError::NotSquare { rows: matrix.rows(), cols: matrix.cols() });
        }
        let defect = matrix.hermiticity_defect();
        if !(defect <= tol) {
            return Err(OperatorError::NotHermitian { defect: defect.to_f64_lossy() });
        }
        Ok(Self { matrix: matrix.hermitian_part(), blocks: None })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { matrix: CMatrix::zeros(dim, dim), blocks: None }
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: CMatrix::identity(dim), blocks: None }
    }

    pub fn from_real_diag(d: &[T]) -> Self {
        Self { matrix: CMatrix::from_real_diag(d), blocks: None }
    }

    /// |u⟩⟨u|
    pub fn projector(dim: usize, u: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        m[(u, u)] = C::new(T::one(), T::zero());
        Self { matrix: m, blocks: None }
    }

    /// Attaches block labels; fails unless the blocks tile the index range and every
    /// entry coupling two different blocks is exactly zero.
    pub fn with_blocks(mut self, blocks: Vec<BlockLabel>) -> Result<Self, OperatorError> {
        check_block_tiling(&blocks, self.dim())?;
        let owner = block_owner(&blocks, self.dim());
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if owner[i] != owner[j] && self.matrix[(i, j)] != C::new(T::zero(), T::zero()) {
                    return Err(OperatorError::BlockStructure(format!("entry ({i},{j}) couples distinct blocks")));
                }
            }
        }
        self.blocks = Some(blocks);
        Ok(self)
    }

    /// Block-diagonal assembly; block `k` receives label `k`.
    pub fn block_diagonal(parts: &[HermitianOperator<T>]) -> Self {
        let dim: usize = parts.iter().map(|p| p.dim()).sum();
        let mut m = CMatrix::zeros(dim, dim);
        let mut blocks = Vec::with_capacity(parts.len());
        let mut start = 0;
        for (k, p) in parts.iter().enumerate() {
            m.set_block(start, start, &p.matrix);
            blocks.push(BlockLabel { label: k, start, len: p.dim() });
            start += p.dim();
        }
        Self { matrix: m, blocks: Some(blocks) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix<T> {
        self.matrix
    }

    pub fn blocks(&self) -> Option<&[BlockLabel]> {
        self.blocks.as_deref()
    }

    pub fn block(&self, k: usize) -> Option<HermitianOperator<T>> {
        let b = self.blocks.as_ref()?.get(k)?;
        Some(Self { matrix: self.matrix.sub_block(b.start, b.start, b.len, b.len), blocks: None })
    }

    pub fn get(&self, i: usize, j: usize) -> C<T> {
        self.matrix[(i, j)]
    }

    pub fn trace(&self) -> T {
        self.matrix.trace().re
    }

    /// Re tr(self · other)
    pub fn inner(&self, other: &Self) -> T {
        self.matrix.inner(&other.matrix)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { matrix: self.matrix.scale(s), blocks: self.blocks.clone() }
    }

    /// Sum of Hermitian operators; block labels kept only when both sides agree.
    pub fn add(&self, other: &Self) -> Self {
        let blocks = if self.blocks == other.blocks { self.blocks.clone() } else { None };
        Self { matrix: &self.matrix + &other.matrix, blocks }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let blocks = if self.blocks == other.blocks { self.blocks.clone() } else { None };
        Self { matrix: &self.matrix - &other.matrix, blocks }
    }

    pub fn axpy(&mut self, s: T, other: &Self) {
        self.matrix.axpy(s, &other.matrix);
        if self.blocks != other.blocks {
            self.blocks = None;
        }
    }

    /// U† A U for a unitary `u`.
    pub fn conjugate_by(&self, u: &CMatrix<T>) -> Self {
        let m = u.adjoint().matmul(&self.matrix).matmul(u);
        Self { matrix: m.hermitian_part(), blocks: self.blocks.clone() }
    }

    pub fn spectral_norm(&self) -> Result<T, OperatorError> {
        let es = eigendecompose(self)?;
        Ok(es.eigenvalues.iter().fold(T::zero(), |m, w| m.max(w.abs())))
    }

    /// Drops the block labels.
    pub fn unlabeled(mut self) -> Self {
        self.blocks = None;
        self
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMatrix<T>) -> Self {
        Self { matrix, blocks: None }
    }
}

fn check_block_tiling(blocks: &[BlockLabel], dim: usize) -> Result<(), OperatorError> {
    let mut pos = 0;
    for b in blocks {
        if b.start != pos || b.len == 0 {
            return Err(OperatorError::BlockStructure(format!("block {} does not continue at index {pos}", b.label)));
        }
        pos += b.len;
    }
    if pos != dim {
        return Err(OperatorError::BlockStructure(format!("blocks cover {pos} of {dim} indices")));
    }
    Ok(())
}

fn block_owner(blocks: &[BlockLabel], dim: usize) -> Vec<usize> {
    let mut owner = vec![0; dim];
    for (k, b) in blocks.iter().enumerate() {
        for o in owner.iter_mut().skip(b.start).take(b.len) {
            *o = k;
        }
    }
    owner
}

/// Eigenvalues in ascending order with eigenvectors as matrix columns.
#[derive(Clone, Debug)]
pub struct EigenSystem<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: CMatrix<T>,
}

impl<T: Real> EigenSystem<T> {
    pub fn vector(&self, k: usize) -> Vec<C<T>> {
        let n = self.eigenvectors.rows();
        (0..n).map(|i| self.eigenvectors[(i, k)]).collect()
    }

    pub fn reconstruct(&self) -> CMatrix<T> {
        let v = &self.eigenvectors;
        let vw = CMatrix::from_fn(v.rows(), v.cols(), |i, j| v[(i, j)] * self.eigenvalues[j]);
        vw.matmul(&v.adjoint())
    }
}

/// Cyclic complex Jacobi eigensolver.
pub fn eigendecompose<T: Real>(a: &HermitianOperator<T>) -> Result<EigenSystem<T>, OperatorError> {
    let tol = Tolerances::<T>::default();
    eigendecompose_matrix(a.matrix(), tol.jacobi, tol.jacobi_max_sweeps)
}

pub(crate) fn eigendecompose_matrix<T: Real>(
    a0: &CMatrix<T>,
    rel_tol: T,
    max_sweeps: usize,
) -> Result<EigenSystem<T>, OperatorError> {
    let n = a0.rows();
    let mut a = a0.hermitian_part();
    let mut v = CMatrix::identity(n);
    let zero = C::new(T::zero(), T::zero());
    let fro = a.frobenius();
    let target = rel_tol * fro;

    let off = |a: &CMatrix<T>| -> T {
        let mut s = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                s += a[(i, j)].norm_sqr();
            }
        }
        (s + s).sqrt()
    };

    let mut sweeps = 0;
    while n > 1 && fro > T::zero() {
        let off_norm = off(&a);
        if off_norm <= target {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(OperatorError::NonConvergence { sweeps, off_norm: off_norm.to_f64_lossy() });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == T::zero() {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // negligible against both diagonal entries: drop it
                if sweeps > 3 && mag < T::epsilon() * T::lit(1e-2) * (app.abs() + aqq.abs()) {
                    a[(p, q)] = zero;
                    a[(q, p)] = zero;
                    continue;
                }
                let phase = apq / mag; // e^{iφ}
                let theta = (aqq - app) / (mag + mag);
                let t = {
                    let r = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() { -r } else { r }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                let ph_c = phase.conj(); // e^{-iφ}
                // columns: A ← A J, V ← V J with J = [[c, s],[−s e^{-iφ}, c e^{-iφ}]]
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * c - akq * ph_c * s;
                    a[(k, q)] = akp * s + akq * ph_c * c;
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * c - vkq * ph_c * s;
                    v[(k, q)] = vkp * s + vkq * ph_c * c;
                }
                // rows: A ← J† A
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = apk * c - aqk * phase * s;
                    a[(q, k)] = apk * s + aqk * phase * c;
                }
                a[(p, q)] = zero;
                a[(q, p)] = zero;
                a[(p, p)] = C::new(a[(p, p)].re, T::zero());
                a[(q, q)] = C::new(a[(q, q)].re, T::zero());
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap_or(std::cmp::Ordering::Equal));
    let eigenvalues: Vec<T> = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vecs = CMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let colmax = (0..n).map(|i| v[(i, src)].norm()).fold(T::zero(), T::max);
        let lead = (0..n).find(|&i| v[(i, src)].norm() > colmax * T::lit(1e-8));
        let fix = match lead {
            Some(i) => {
                let z = v[(i, src)];
                z.conj() / z.norm()
            }
            None => C::new(T::one(), T::zero()),
        };
        for i in 0..n {
            vecs[(i, col)] = v[(i, src)] * fix;
        }
    }
    Ok(EigenSystem { eigenvalues, eigenvectors: vecs })
}

/// Largest eigenvalue and a radius such that the exact largest eigenvalue lies in
/// `[value − radius, value + radius]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CertifiedEigenvalue<T> {
    pub value: T,
    pub radius: T,
    /// ‖Av − λv‖₂ for the top eigenpair.
    pub residual: T,
}

/// Computes λ_max with a rigorous enclosure radius.
///
/// With `R = AV − VW` and `θ = ‖V†V − I‖_F < 1`, every eigenvalue of `A` is within
/// `(‖R‖_F + 2θ‖W‖)/(1 − θ)` of the matching sorted entry of `W` (Weyl's inequality applied
/// after the polar factor of `V`). A floating-point allowance proportional to
/// `n·ε·(‖A‖_F + ‖W‖)` covers the rounding in forming `R` and `θ`.
pub fn max_eigenvalue<T: Real>(a: &HermitianOperator<T>) -> Result<CertifiedEigenvalue<T>, OperatorError> {
    let n = a.dim();
    if n == 0 {
        return Err(OperatorError::DimensionMismatch { expected: 1, got: 0 });
    }
    let es = eigendecompose(a)?;
    let v = &es.eigenvectors;
    let w = &es.eigenvalues;
    let av = a.matrix().matmul(v);
    let vw = CMatrix::from_fn(n, n, |i, j| v[(i, j)] * w[j]);
    let r = &av - &vw;
    let r_f = r.frobenius();
    let gram = v.adjoint().matmul(v);
    let theta = (&gram - &CMatrix::identity(n)).frobenius();
    let wnorm = w.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let top = n - 1;
    let residual = (0..n).map(|i| r[(i, top)].norm_sqr()).sum::<T>().sqrt();
    if theta >= T::lit(0.5) {
        return Err(OperatorError::NonConvergence { sweeps: 0, off_norm: theta.to_f64_lossy() });
    }
    let nn = T::from_count(n);
    let rounding = T::lit(4.0) * nn * nn * T::epsilon() * (a.matrix().frobenius() + wnorm);
    let radius = (r_f + T::lit(2.0) * theta * wnorm) / (T::one() - theta) + rounding;
    Ok(CertifiedEigenvalue { value: w[top], radius, residual })
}

/// Kronecker product with the default dimension cap.
pub fn tensor_product<T: Real>(
    a: &HermitianOperator<T>,
    b: &HermitianOperator<T>,
) -> Result<HermitianOperator<T>, OperatorError> {
    tensor_product_capped(a, b, DEFAULT_MAX_DIM)
}

pub fn tensor_product_capped<T: Real>(
    a: &HermitianOperator<T>,
    b: &HermitianOperator<T>,
    max_dim: usize,
) -> Result<HermitianOperator<T>, OperatorError> {
    let dim = a.dim().checked_mul(b.dim()).unwrap_or(usize::MAX);
    if dim > max_dim {
        return Err(OperatorError::DimensionOverflow { dim, max: max_dim });
    }
    Ok(HermitianOperator::from_matrix_unchecked(a.matrix().kron(b.matrix())))
}

/// ⟨α|β⟩ for coherent states: exp(−(|α|²+|β|²)/2 + conj(α)·β).
pub fn coherent_overlap<T: Real>(alpha: Complex<T>, beta: Complex<T>) -> Complex<T> {
    let half = T::lit(0.5);
    let cross = alpha.conj() * beta;
    let re = -(alpha.norm_sqr() + beta.norm_sqr()) * half + cross.re;
    let m = re.exp();
    // evaluate on |im| so that swapping the arguments conjugates the result bit-for-bit
    let (s, c) = cross.im.abs().sin_cos();
    let s = if cross.im < T::zero() { -s } else { s };
    Complex::new(m * c, m * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli_z() -> HermitianOperator<f64> {
        HermitianOperator::from_real_diag(&[1.0, -1.0])
    }

    #[test]
    fn identity_tensor() {
        let i2 = HermitianOperator::<f64>::identity(2);
        let i4 = tensor_product(&i2, &i2).unwrap();
        assert_eq!(i4.matrix(), HermitianOperator::<f64>::identity(4).matrix());
    }

    #[test]
    fn zz_spectrum() {
        let zz = tensor_product(&pauli_z(), &pauli_z()).unwrap();
        let es = eigendecompose(&zz).unwrap();
        assert_eq!(es.eigenvalues, vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn yy_traceless() {
        let y = CMatrix::from_vec(
            2,
            2,
            vec![C::new(0.0, 0.0), C::new(0.0, -1.0), C::new(0.0, 1.0), C::new(0.0, 0.0)],
        );
        let y = HermitianOperator::new(y).unwrap();
        let yy = tensor_product(&y, &y).unwrap();
        assert_eq!(yy.trace(), 0.0);
    }

    #[test]
    fn overflow_rejected() {
        let a = HermitianOperator::<f64>::identity(65);
        assert!(matches!(tensor_product(&a, &a), Err(OperatorError::DimensionOverflow { .. })));
    }

    #[test]
    fn max_eig_zero_matrix() {
        let r = max_eigenvalue(&HermitianOperator::<f64>::zeros(3)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.radius <= 1e-14);
    }

    #[test]
    fn max_eig_diag() {
        let r = max_eigenvalue(&HermitianOperator::from_real_diag(&[-1.0, -3.0])).unwrap();
        assert_eq!(r.value, -1.0);
        assert!(r.radius <= 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let a = Complex::new(0.7, -0.2);
        assert!((coherent_overlap(a, a) - Complex::new(1.0, 0.0)).norm() < 1e-15);
        let mu = 0.5f64;
        let o = coherent_overlap(Complex::new(mu.sqrt(), 0.0), Complex::new(-mu.sqrt(), 0.0));
        assert!((o.re - (-1.0f64).exp()).abs() < 1e-15);
        assert!((o.re - 0.3678794).abs() < 1e-7);
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMatrix::from_vec(2, 2, vec![C::new(1.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(1.0, 0.0)]);
        assert!(matches!(HermitianOperator::new(m), Err(OperatorError::NotHermitian { .. })));
    }

    #[test]
    fn block_labels_reject_coupling() {
        let m = CMatrix::from_vec(2, 2, vec![C::new(1.0, 0.0), C::new(0.5, 0.0), C::new(0.5, 0.0), C::new(1.0, 0.0)]);
        let h = HermitianOperator::new(m).unwrap();
        let blocks = vec![BlockLabel { label: 0, start: 0, len: 1 }, BlockLabel { label: 1, start: 1, len: 1 }];
        assert!(h.with_blocks(blocks).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let h = HermitianOperator::<f32>::from_real_diag(&[2.0, -1.0, 0.5]);
        let r = max_eigenvalue(&h).unwrap();
        assert_eq!(r.value, 2.0);
    }
}
