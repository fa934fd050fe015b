//! Protocol instances reduced to Gram data, and the renormalized operators built from them.
//!
//! The ancilla space is indexed by `u`: `u = i` for prepare-and-measure instances and
//! `u = i·d_B + j` for MDI instances. Operators on the full SDP space are block-diagonal
//! over the announcement register, each block being `ancilla ⊗ trailing` where the trailing
//! factor is Bob's measured system (prepare-and-measure) or trivial (MDI).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMatrix, C};
use crate::operator::{eigendecompose, HermitianOperator, OperatorError};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid protocol instance: {0}")]
    Invalid(String),
    #[error("zero weight τ at ancilla index {index} in forward renormalization")]
    ZeroWeight { index: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("zero denominator for test outcome (i={i}, y={y}, outcome={outcome}) under nonzero β")]
    ZeroDenominator { i: usize, y: usize, outcome: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator is not a valid POVM element (eigenvalues in [{min:e}, {max:e}])")]
    NotPovmElement { min: f64, max: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    PrepareAndMeasure,
    Mdi,
}

/// Key of a test outcome: `(i, y, b)` for prepare-and-measure, `(i, j, ξ)` for MDI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutcomeKey {
    pub i: usize,
    pub y: usize,
    pub outcome: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TestProbability<T> {
    #[serde(flatten)]
    pub key: OutcomeKey,
    pub p: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ProtocolInstance<T> {
    pub kind: ProtocolKind,
    pub d_a: usize,
    pub d_b: usize,
    pub tau_a: Vec<T>,
    pub tau_b: Vec<T>,
    pub gram_a: CMatrix<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram_b: Option<CMatrix<T>>,
    pub announcement_dim: usize,
    /// Bob's POVM elements Γ_y^b (prepare-and-measure only), indexed `[y][b]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bob_povms: Option<Vec<Vec<CMatrix<T>>>>,
    pub p_test: Vec<TestProbability<T>>,
    pub aux_probs: Vec<T>,
}

impl<T: Real> ProtocolInstance<T> {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |s: String| Err(ProtocolError::Invalid(s));
        let sum_tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        for (name, v) in [("tau_a", &self.tau_a), ("tau_b", &self.tau_b), ("aux_probs", &self.aux_probs)] {
            if v.iter().any(|x| !(*x >= T::zero())) {
                return bad(format!("{name} has a negative or NaN entry"));
            }
            let s: T = v.iter().copied().sum();
            if (s - T::one()).abs() > sum_tol {
                return bad(format!("{name} sums to {s}"));
            }
        }
        if self.tau_a.len() != self.d_a {
            return bad(format!("tau_a has {} entries, d_a = {}", self.tau_a.len(), self.d_a));
        }
        if self.tau_b.len() != self.d_b {
            return bad(format!("tau_b has {} entries, d_b = {}", self.tau_b.len(), self.d_b));
        }
        if self.announcement_dim == 0 {
            return bad("announcement_dim must be positive".into());
        }
        check_gram(&self.gram_a, self.d_a, "gram_a")?;
        match self.kind {
            ProtocolKind::Mdi => {
                let g = self.gram_b.as_ref().ok_or_else(|| ProtocolError::Invalid("MDI instance needs gram_b".into()))?;
                check_gram(g, self.d_b, "gram_b")?;
            }
            ProtocolKind::PrepareAndMeasure => {
                let povms =
                    self.bob_povms.as_ref().ok_or_else(|| ProtocolError::Invalid("P&M instance needs bob_povms".into()))?;
                if povms.len() != self.d_b {
                    return bad(format!("{} POVMs for {} measurement settings", povms.len(), self.d_b));
                }
                let dim = self.trailing_dim();
                for (y, povm) in povms.iter().enumerate() {
                    let mut total = CMatrix::zeros(dim, dim);
                    for e in povm {
                        if e.rows() != dim || e.cols() != dim {
                            return bad(format!("POVM {y} has inconsistent dimensions"));
                        }
                        total = &total + e;
                    }
                    if (&total - &CMatrix::identity(dim)).max_abs() > T::lit(1e-9) {
                        return bad(format!("POVM {y} does not sum to identity"));
                    }
                }
            }
        }
        for t in &self.p_test {
            if !(t.p >= T::zero() && t.p <= T::one()) {
                return bad(format!("p_test {:?} = {} outside [0,1]", t.key, t.p));
            }
        }
        Ok(())
    }

    pub fn ancilla_dim(&self) -> usize {
        match self.kind {
            ProtocolKind::PrepareAndMeasure => self.d_a,
            ProtocolKind::Mdi => self.d_a * self.d_b,
        }
    }

    pub fn trailing_dim(&self) -> usize {
        match self.kind {
            ProtocolKind::PrepareAndMeasure => {
                self.bob_povms.as_ref().and_then(|p| p.first()).and_then(|p| p.first()).map_or(1, |m| m.rows())
            }
            ProtocolKind::Mdi => 1,
        }
    }

    pub fn block_dim(&self) -> usize {
        self.ancilla_dim() * self.trailing_dim()
    }

    pub fn full_dim(&self) -> usize {
        self.block_dim() * self.announcement_dim
    }

    /// Linear ancilla index of the MDI pair `(i, j)`.
    pub fn mdi_index(&self, i: usize, j: usize) -> usize {
        i * self.d_b + j
    }

    /// τ_u for each ancilla index.
    pub fn ancilla_weights(&self) -> Vec<T> {
        match self.kind {
            ProtocolKind::PrepareAndMeasure => self.tau_a.clone(),
            ProtocolKind::Mdi => {
                let mut w = Vec::with_capacity(self.d_a * self.d_b);
                for ta in &self.tau_a {
                    for tb in &self.tau_b {
                        w.push(*ta * *tb);
                    }
                }
                w
            }
        }
    }

    /// ⟨ψ_u|ψ_u'⟩ on the ancilla index space.
    pub fn ancilla_gram(&self) -> CMatrix<T> {
        match self.kind {
            ProtocolKind::PrepareAndMeasure => self.gram_a.clone(),
            ProtocolKind::Mdi => {
                let gb = self.gram_b.as_ref().expect("validated MDI instance");
                self.gram_a.kron(gb)
            }
        }
    }

    pub fn p_test(&self, key: OutcomeKey) -> T {
        self.p_test.iter().find(|t| t.key == key).map_or(T::zero(), |t| t.p)
    }

    /// Lifts an ancilla operator to the full space: ⊕_ξ (P ⊗ I_trailing).
    pub fn lift_ancilla_operator(&self, p: &HermitianOperator<T>) -> Result<HermitianOperator<T>, ProtocolError> {
        if p.dim() != self.ancilla_dim() {
            return Err(ProtocolError::DimensionMismatch { expected: self.ancilla_dim(), got: p.dim() });
        }
        let block = HermitianOperator::from_matrix_unchecked(p.matrix().kron(&CMatrix::identity(self.trailing_dim())));
        Ok(HermitianOperator::block_diagonal(&vec![block; self.announcement_dim]))
    }

    /// Full-space operator from one block per announcement value.
    pub fn assemble_blocks(&self, blocks: &[HermitianOperator<T>]) -> Result<HermitianOperator<T>, ProtocolError> {
        if blocks.len() != self.announcement_dim {
            return Err(ProtocolError::DimensionMismatch { expected: self.announcement_dim, got: blocks.len() });
        }
        for b in blocks {
            if b.dim() != self.block_dim() {
                return Err(ProtocolError::DimensionMismatch { expected: self.block_dim(), got: b.dim() });
            }
        }
        Ok(HermitianOperator::block_diagonal(blocks))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, ProtocolError> {
        let inst: Self = serde_json::from_str(s).map_err(|e| ProtocolError::Invalid(e.to_string()))?;
        inst.validate()?;
        Ok(inst)
    }
}

fn check_gram<T: Real>(g: &CMatrix<T>, d: usize, name: &str) -> Result<(), ProtocolError> {
    if g.rows() != d || g.cols() != d {
        return Err(ProtocolError::Invalid(format!("{name} must be {d}x{d}")));
    }
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
    if g.hermiticity_defect() > tol {
        return Err(ProtocolError::Invalid(format!("{name} is not Hermitian")));
    }
    for i in 0..d {
        if (g[(i, i)] - C::new(T::one(), T::zero())).norm() > tol {
            return Err(ProtocolError::Invalid(format!("{name} diagonal entry {i} is not 1")));
        }
    }
    let es = eigendecompose(&HermitianOperator::with_tolerance(g.clone(), tol)?)?;
    if es.eigenvalues[0] < -T::lit(1e-10).max(T::epsilon() * T::lit(1e3)) {
        return Err(ProtocolError::Invalid(format!("{name} is not positive semidefinite")));
    }
    Ok(())
}

/// Which of the two renormalization maps to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Applies 𝒯 (forward) or 𝒯⁻¹ (inverse) on the ancilla factor of an `ancilla ⊗ trailing`
/// operator. Forward maps element ((u,t),(u',t')) to element ((u',t),(u,t')) / √(τ_u τ_u');
/// inverse multiplies instead.
pub fn renormalize_with<T: Real>(
    op: &HermitianOperator<T>,
    weights: &[T],
    trailing: usize,
    direction: Direction,
) -> Result<HermitianOperator<T>, ProtocolError> {
    let d = weights.len();
    if op.dim() != d * trailing {
        return Err(ProtocolError::DimensionMismatch { expected: d * trailing, got: op.dim() });
    }
    let m = op.matrix();
    if direction == Direction::Forward {
        for (u, w) in weights.iter().enumerate() {
            if *w <= T::zero() {
                let used = (0..trailing).any(|t| (0..op.dim()).any(|c| m[(u * trailing + t, c)].norm() != T::zero()));
                if used {
                    return Err(ProtocolError::ZeroWeight { index: u });
                }
            }
        }
    }
    let sq: Vec<T> = weights.iter().map(|w| w.max(T::zero()).sqrt()).collect();
    let out = CMatrix::from_fn(op.dim(), op.dim(), |r, c| {
        let (u, t) = (r / trailing, r % trailing);
        let (u2, t2) = (c / trailing, c % trailing);
        let src = m[(u2 * trailing + t, u * trailing + t2)];
        if src.re == T::zero() && src.im == T::zero() {
            return src;
        }
        let s = sq[u] * sq[u2];
        match direction {
            Direction::Forward => src / s,
            Direction::Inverse => src * s,
        }
    });
    Ok(HermitianOperator::from_matrix_unchecked(out))
}

/// Renormalization of a single announcement block of `instance`.
pub fn renormalize<T: Real>(
    op: &HermitianOperator<T>,
    instance: &ProtocolInstance<T>,
    direction: Direction,
) -> Result<HermitianOperator<T>, ProtocolError> {
    renormalize_with(op, &instance.ancilla_weights(), instance.trailing_dim(), direction)
}

/// Coefficient ν_{k,u,u'} combining elementary pair operators into P̂_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NuEntry<T> {
    pub k: usize,
    pub u: usize,
    pub u_prime: usize,
    pub coeff: T,
}

/// Coefficient β_{l,key} combining elementary test operators into Q̂_l.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BetaEntry<T> {
    pub l: usize,
    #[serde(flatten)]
    pub key: OutcomeKey,
    pub coeff: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CountEntry<T> {
    #[serde(flatten)]
    pub key: OutcomeKey,
    pub count: T,
}

#[derive(Clone, Debug)]
pub struct ConstraintSet<T> {
    pub p_ops: Vec<HermitianOperator<T>>,
    pub p_vals: Vec<T>,
    pub q_ops: Vec<HermitianOperator<T>>,
    pub q_nom: Vec<T>,
    pub nu_coeffs: Vec<NuEntry<T>>,
    pub beta_coeffs: Vec<BetaEntry<T>>,
}

impl<T: Real> ConstraintSet<T> {
    pub fn check(&self) -> Result<(), ProtocolError> {
        if self.p_ops.len() != self.p_vals.len() {
            return Err(ProtocolError::Invalid("len(P_ops) != len(p_vals)".into()));
        }
        if self.q_ops.len() != self.q_nom.len() {
            return Err(ProtocolError::Invalid("len(Q_ops) != len(q_nom)".into()));
        }
        Ok(())
    }
}

/// Elementary pair operator and its Gram value.
///
/// For `u ≥ u'` the operator is (|u⟩⟨u'| + |u'⟩⟨u|)/2 with value Re⟨ψ_u|ψ_u'⟩; for `u < u'`
/// it is (|u⟩⟨u'| − |u'⟩⟨u|)/(2i) with value Im⟨ψ_u'|ψ_u⟩, which is what tr(P̂ Ĝ) equals
/// when Ĝ_{s,s'} = ⟨ψ_s|ψ_s'⟩.
pub fn elementary_pair<T: Real>(dim: usize, u: usize, up: usize, gram: &CMatrix<T>) -> (CMatrix<T>, T) {
    let mut m = CMatrix::zeros(dim, dim);
    let half = T::lit(0.5);
    if u >= up {
        m[(u, up)] += C::new(half, T::zero());
        m[(up, u)] += C::new(half, T::zero());
        (m, gram[(u, up)].re)
    } else {
        // 1/(2i) = −i/2
        m[(u, up)] = C::new(T::zero(), -half);
        m[(up, u)] = C::new(T::zero(), half);
        (m, gram[(up, u)].im)
    }
}

pub fn build_inner_product_constraints<T: Real>(
    instance: &ProtocolInstance<T>,
    nu: &[NuEntry<T>],
) -> Result<(Vec<HermitianOperator<T>>, Vec<T>), ProtocolError> {
    let dim = instance.ancilla_dim();
    let gram = instance.ancilla_gram();
    let m = nu.iter().map(|e| e.k + 1).max().unwrap_or(0);
    let mut ops = vec![CMatrix::zeros(dim, dim); m];
    let mut vals = vec![T::zero(); m];
    let mut seen = vec![false; m];
    for e in nu {
        if e.u >= dim || e.u_prime >= dim {
            return Err(ProtocolError::IndexOutOfRange(format!(
                "ν entry k={} references ({}, {}) with ancilla dimension {dim}",
                e.k, e.u, e.u_prime
            )));
        }
        let (p, v) = elementary_pair(dim, e.u, e.u_prime, &gram);
        ops[e.k].axpy(e.coeff, &p);
        vals[e.k] += e.coeff * v;
        seen[e.k] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(ProtocolError::IndexOutOfRange(format!("constraint k={k} has no ν entries")));
    }
    Ok((ops.into_iter().map(HermitianOperator::from_matrix_unchecked).collect(), vals))
}

/// Elementary observation operator Q̂_key on the full space.
pub fn elementary_observation<T: Real>(
    instance: &ProtocolInstance<T>,
    key: OutcomeKey,
) -> Result<HermitianOperator<T>, ProtocolError> {
    let bd = instance.block_dim();
    let mut blocks = vec![HermitianOperator::zeros(bd); instance.announcement_dim];
    match instance.kind {
        ProtocolKind::Mdi => {
            if key.i >= instance.d_a || key.y >= instance.d_b || key.outcome >= instance.announcement_dim {
                return Err(ProtocolError::IndexOutOfRange(format!("{key:?}")));
            }
            blocks[key.outcome] = HermitianOperator::projector(bd, instance.mdi_index(key.i, key.y));
        }
        ProtocolKind::PrepareAndMeasure => {
            let povms = instance.bob_povms.as_ref().ok_or_else(|| ProtocolError::Invalid("missing POVMs".into()))?;
            let g = povms
                .get(key.y)
                .and_then(|p| p.get(key.outcome))
                .ok_or_else(|| ProtocolError::IndexOutOfRange(format!("{key:?}")))?;
            if key.i >= instance.d_a {
                return Err(ProtocolError::IndexOutOfRange(format!("{key:?}")));
            }
            let proj = HermitianOperator::<T>::projector(instance.d_a, key.i);
            blocks[0] = HermitianOperator::from_matrix_unchecked(proj.matrix().kron(g));
        }
    }
    instance.assemble_blocks(&blocks)
}

pub fn build_observation_constraints<T: Real>(
    instance: &ProtocolInstance<T>,
    beta: &[BetaEntry<T>],
) -> Result<Vec<HermitianOperator<T>>, ProtocolError> {
    let n = beta.iter().map(|e| e.l + 1).max().unwrap_or(0);
    let mut ops = vec![HermitianOperator::zeros(instance.full_dim()); n];
    for e in beta {
        let q = elementary_observation(instance, e.key)?;
        ops[e.l].axpy(e.coeff, &q);
    }
    let blocks = elementary_observation(instance, OutcomeKey { i: 0, y: 0, outcome: 0 })
        .ok()
        .and_then(|q| q.blocks().map(|b| b.to_vec()));
    if let Some(b) = blocks {
        ops = ops.into_iter().map(|o| o.with_blocks(b.clone())).collect::<Result<_, _>>()?;
    }
    Ok(ops)
}

/// N_l = Σ β·N_test/(τ_A τ_B p_test).
pub fn aggregate_test_counts<T: Real>(
    instance: &ProtocolInstance<T>,
    beta: &[BetaEntry<T>],
    counts: &[CountEntry<T>],
) -> Result<Vec<T>, ProtocolError> {
    let n = beta.iter().map(|e| e.l + 1).max().unwrap_or(0);
    let mut out = vec![T::zero(); n];
    for e in beta {
        if e.coeff == T::zero() {
            continue;
        }
        let ta = *instance.tau_a.get(e.key.i).ok_or_else(|| ProtocolError::IndexOutOfRange(format!("{:?}", e.key)))?;
        let tb = *instance.tau_b.get(e.key.y).ok_or_else(|| ProtocolError::IndexOutOfRange(format!("{:?}", e.key)))?;
        let den = ta * tb * instance.p_test(e.key);
        if den <= T::zero() {
            return Err(ProtocolError::ZeroDenominator { i: e.key.i, y: e.key.y, outcome: e.key.outcome });
        }
        let count: T = counts.iter().filter(|c| c.key == e.key).map(|c| c.count).sum();
        if count < T::zero() {
            return Err(ProtocolError::Invalid(format!("negative count for {:?}", e.key)));
        }
        out[e.l] += e.coeff * count / den;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PhaseErrorSpec<T> {
    /// Ê^obs_ph per announcement block.
    pub e_obs_blocks: Vec<HermitianOperator<T>>,
    /// Renormalized, block-diagonal Ê_ph.
    pub e_ph: HermitianOperator<T>,
}

/// Sums the supplied Ê^obs_{ph,−,γ} per announcement block, checks each sum is a POVM
/// element and assembles ⊕_ξ 𝒯⁻¹(Ê^obs,ξ_ph).
pub fn build_phase_error_operator<T: Real>(
    instance: &ProtocolInstance<T>,
    per_block_terms: &[Vec<HermitianOperator<T>>],
) -> Result<PhaseErrorSpec<T>, ProtocolError> {
    if per_block_terms.len() != instance.announcement_dim {
        return Err(ProtocolError::DimensionMismatch { expected: instance.announcement_dim, got: per_block_terms.len() });
    }
    let bd = instance.block_dim();
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(1e3));
    let mut obs = Vec::with_capacity(per_block_terms.len());
    let mut renorm = Vec::with_capacity(per_block_terms.len());
    for terms in per_block_terms {
        let mut sum = HermitianOperator::zeros(bd);
        for t in terms {
            if t.dim() != bd {
                return Err(ProtocolError::DimensionMismatch { expected: bd, got: t.dim() });
            }
            sum.axpy(T::one(), t);
        }
        let es = eigendecompose(&sum)?;
        let (lo, hi) = (es.eigenvalues[0], es.eigenvalues[bd - 1]);
        if lo < -tol || hi > T::one() + tol {
            return Err(ProtocolError::NotPovmElement { min: lo.to_f64_lossy(), max: hi.to_f64_lossy() });
        }
        renorm.push(renormalize(&sum, instance, Direction::Inverse)?);
        obs.push(sum);
    }
    let e_ph = instance.assemble_blocks(&renorm)?;
    Ok(PhaseErrorSpec { e_obs_blocks: obs, e_ph })
}

/// Announcement tuple `(i, y or j, b or ξ, α)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnnouncementKey {
    #[serde(flatten)]
    pub outcome: OutcomeKey,
    pub alpha: usize,
}

/// Signal/test split of announcements plus the reconciled key bit of each signal tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnouncementScheme {
    pub signal: Vec<AnnouncementKey>,
    pub test: Vec<AnnouncementKey>,
    /// Bob's reconciled bit for each signal announcement.
    pub reconciliation: Vec<(AnnouncementKey, u8)>,
}

impl AnnouncementScheme {
    /// Signal and test sets must be disjoint and cover `universe`.
    pub fn validate(&self, universe: &[AnnouncementKey]) -> Result<(), ProtocolError> {
        use std::collections::BTreeSet;
        let s: BTreeSet<_> = self.signal.iter().collect();
        let t: BTreeSet<_> = self.test.iter().collect();
        if let Some(k) = s.intersection(&t).next() {
            return Err(ProtocolError::Invalid(format!("{k:?} is both signal and test")));
        }
        for k in universe {
            if !s.contains(k) && !t.contains(k) {
                return Err(ProtocolError::Invalid(format!("{k:?} is neither signal nor test")));
            }
        }
        for k in &self.signal {
            if !self.reconciliation.iter().any(|(r, _)| r == k) {
                return Err(ProtocolError::Invalid(format!("signal {k:?} has no reconciled bit")));
            }
        }
        Ok(())
    }

    /// p_test(key) = Σ_α p_aux,α [key with α is a test announcement].
    pub fn test_probability<T: Real>(&self, key: OutcomeKey, aux: &[T]) -> T {
        aux.iter()
            .enumerate()
            .filter(|(a, _)| self.test.contains(&AnnouncementKey { outcome: key, alpha: *a }))
            .map(|(_, p)| *p)
            .sum()
    }
}

#[cfg(test)]
fn c_re<T: Real>(x: T) -> C<T> {
    C::new(x, T::zero())
}
