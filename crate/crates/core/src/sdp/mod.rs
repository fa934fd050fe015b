//! Phase-error SDP: primal solve, dual certificates with a strict margin, and a-posteriori
//! verification of the operator inequality.

mod blocks;
mod certificate;
mod ipm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use certificate::{protocol_hash, CertificateFile};
pub use ipm::{Residuals, SolverStatus};

use crate::linalg::CMatrix;
use crate::operator::{max_eigenvalue, BlockLabel, HermitianOperator, OperatorError};
use crate::protocol::{ConstraintSet, PhaseErrorSpec, ProtocolError, ProtocolInstance};
use crate::scalar::{Real, Tolerances};
use blocks::{Blocks, SparseOp};

#[derive(Debug, Error, Clone)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("primal infeasible; failing constraint family: {family:?}")]
    Infeasible { family: InfeasibleFamily },
    #[error("dual infeasible (primal unbounded)")]
    Unbounded,
    #[error("solver stopped with status {status:?} (primal inf {pinf:e}, dual inf {dinf:e}, gap {gap:e})")]
    Solver { status: SolverStatus, pinf: f64, dinf: f64, gap: f64 },
    #[error("negative margin {0}")]
    NegativeMargin(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Constraint family; decides where a multiplier lands in the certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    /// Inner-product (Gram) constraints; multipliers λ.
    Gram,
    /// Observation constraints; multipliers η.
    Observation,
    /// Explicit off-block zero constraints of an unreduced formulation; multipliers dropped.
    Structural,
}

/// Which family makes the constraint system infeasible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleFamily {
    Gram,
    Observation,
    /// Each family is feasible on its own but not jointly.
    Combination,
    Undetermined,
}

#[derive(Clone, Debug)]
pub struct SdpConstraint<T> {
    pub op: HermitianOperator<T>,
    pub rhs: T,
    pub family: ConstraintFamily,
}

#[derive(Clone, Debug)]
pub struct SdpProblem<T> {
    pub objective: HermitianOperator<T>,
    pub constraints: Vec<SdpConstraint<T>>,
    block_structure: Vec<BlockLabel>,
    sparse: Vec<SparseOp<T>>,
}

impl<T: Real> SdpProblem<T> {
    /// The variable inherits the objective's block labels (a single block when absent).
    /// Constraints must not couple distinct blocks.
    pub fn new(objective: HermitianOperator<T>, constraints: Vec<SdpConstraint<T>>) -> Result<Self, SdpError> {
        let dim = objective.dim();
        let block_structure = objective
            .blocks()
            .map(|b| b.to_vec())
            .unwrap_or_else(|| vec![BlockLabel { label: 0, start: 0, len: dim }]);
        let mut sparse = Vec::with_capacity(constraints.len());
        for (idx, c) in constraints.iter().enumerate() {
            if c.op.dim() != dim {
                return Err(SdpError::InvalidProblem(format!("constraint {idx} has dimension {} (expected {dim})", c.op.dim())));
            }
            if !c.rhs.is_finite() {
                return Err(SdpError::InvalidProblem(format!("constraint {idx} has a non-finite right-hand side")));
            }
            let m = c.op.matrix();
            for (bi, bl) in block_structure.iter().enumerate() {
                for other in block_structure.iter().skip(bi + 1) {
                    for r in bl.start..bl.start + bl.len {
                        for s in other.start..other.start + other.len {
                            if m[(r, s)].norm() != T::zero() {
                                return Err(SdpError::InvalidProblem(format!(
                                    "constraint {idx} couples blocks {} and {}",
                                    bl.label, other.label
                                )));
                            }
                        }
                    }
                }
            }
            sparse.push(SparseOp::from_blocks(&split_blocks(m, &block_structure)));
        }
        Ok(Self { objective, constraints, block_structure, sparse })
    }

    /// Lifts P̂_k to ⊕_ξ P̂_k ⊗ Î and pairs the constraint set with Ê_ph.
    pub fn from_constraint_set(
        instance: &ProtocolInstance<T>,
        phase: &PhaseErrorSpec<T>,
        cs: &ConstraintSet<T>,
    ) -> Result<Self, SdpError> {
        cs.check()?;
        let mut constraints = Vec::with_capacity(cs.p_ops.len() + cs.q_ops.len());
        for (p, v) in cs.p_ops.iter().zip(&cs.p_vals) {
            constraints.push(SdpConstraint { op: instance.lift_ancilla_operator(p)?, rhs: *v, family: ConstraintFamily::Gram });
        }
        for (q, v) in cs.q_ops.iter().zip(&cs.q_nom) {
            constraints.push(SdpConstraint { op: q.clone(), rhs: *v, family: ConstraintFamily::Observation });
        }
        Self::new(phase.e_ph.clone(), constraints)
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn block_structure(&self) -> &[BlockLabel] {
        &self.block_structure
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.block_structure.iter().map(|b| b.len).collect()
    }

    fn family_values(&self, f: ConstraintFamily) -> Vec<T> {
        self.constraints.iter().filter(|c| c.family == f).map(|c| c.rhs).collect()
    }

    /// Right-hand sides of the Gram family (p_k).
    pub fn p_vals(&self) -> Vec<T> {
        self.family_values(ConstraintFamily::Gram)
    }

    /// Right-hand sides of the observation family (q_l).
    pub fn q_vals(&self) -> Vec<T> {
        self.family_values(ConstraintFamily::Observation)
    }

    /// Copy with the observation right-hand sides replaced.
    pub fn with_observations(&self, q: &[T]) -> Result<Self, SdpError> {
        let n_obs = self.constraints.iter().filter(|c| c.family == ConstraintFamily::Observation).count();
        if q.len() != n_obs {
            return Err(SdpError::InvalidProblem(format!("{} observations for {n_obs} constraints", q.len())));
        }
        let mut out = self.clone();
        let mut it = q.iter();
        for c in out.constraints.iter_mut().filter(|c| c.family == ConstraintFamily::Observation) {
            c.rhs = *it.next().expect("length checked");
        }
        Ok(out)
    }

    fn subset(&self, keep: impl Fn(ConstraintFamily) -> bool, zero_objective: bool) -> Self {
        let idx: Vec<usize> = (0..self.constraints.len()).filter(|&i| keep(self.constraints[i].family)).collect();
        let objective = if zero_objective {
            let z = HermitianOperator::zeros(self.dim());
            z.with_blocks(self.block_structure.clone()).expect("zero matrix fits any blocks")
        } else {
            self.objective.clone()
        };
        Self {
            objective,
            constraints: idx.iter().map(|&i| self.constraints[i].clone()).collect(),
            block_structure: self.block_structure.clone(),
            sparse: idx.iter().map(|&i| self.sparse[i].clone()).collect(),
        }
    }

    fn standard_form(&self, margin: T) -> ipm::StandardForm<T> {
        let mut c = split_blocks(self.objective.matrix(), &self.block_structure);
        for b in c.iter_mut() {
            let n = b.rows();
            *b = (&*b + &CMatrix::identity(n).scale(margin)).scale(-T::one());
        }
        ipm::StandardForm {
            sizes: self.block_sizes(),
            c,
            a: self.sparse.clone(),
            b: self.constraints.iter().map(|c| c.rhs).collect(),
        }
    }
}

fn split_blocks<T: Real>(m: &CMatrix<T>, structure: &[BlockLabel]) -> Blocks<T> {
    structure.iter().map(|b| m.sub_block(b.start, b.start, b.len, b.len)).collect()
}

fn join_blocks<T: Real>(bl: &Blocks<T>, structure: &[BlockLabel], dim: usize) -> CMatrix<T> {
    let mut m = CMatrix::zeros(dim, dim);
    for (b, lab) in bl.iter().zip(structure) {
        m.set_block(lab.start, lab.start, b);
    }
    m
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SolverMeta<T> {
    pub status: SolverStatus,
    pub iterations: usize,
    pub residuals: Residuals<T>,
    pub primal_objective: T,
    pub dual_objective: T,
}

#[derive(Clone, Debug)]
pub struct PrimalSolution<T> {
    pub value: T,
    pub g: HermitianOperator<T>,
    pub meta: SolverMeta<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct VerificationReport<T> {
    pub max_eig: T,
    pub radius: T,
    pub accepted: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DualCertificate<T> {
    pub lambda: Vec<T>,
    pub eta: Vec<T>,
    pub margin: T,
    pub bound_value: T,
    pub verification: VerificationReport<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_meta: Option<SolverMeta<T>>,
}

fn options<T: Real>() -> ipm::IpmOptions<T> {
    let tol = Tolerances::<T>::default();
    ipm::IpmOptions { tol: tol.sdp_gap, accept_tol: T::lit(1e-8).max(tol.sdp_gap), max_iter: tol.sdp_max_iter }
}

fn meta_of<T: Real>(out: &ipm::IpmOutput<T>) -> SolverMeta<T> {
    SolverMeta {
        status: out.status,
        iterations: out.iterations,
        residuals: out.residuals.clone(),
        primal_objective: -out.pobj,
        dual_objective: -out.dobj,
    }
}

fn status_error<T: Real>(problem: &SdpProblem<T>, out: &ipm::IpmOutput<T>) -> SdpError {
    match out.status {
        SolverStatus::PrimalInfeasible => SdpError::Infeasible { family: diagnose_infeasibility(problem) },
        SolverStatus::DualInfeasible => SdpError::Unbounded,
        s => SdpError::Solver {
            status: s,
            pinf: out.residuals.primal_infeasibility.to_f64_lossy(),
            dinf: out.residuals.dual_infeasibility.to_f64_lossy(),
            gap: out.residuals.relative_gap.to_f64_lossy(),
        },
    }
}

/// Identifies which constraint family cannot be met on its own.
pub fn diagnose_infeasibility<T: Real>(problem: &SdpProblem<T>) -> InfeasibleFamily {
    let feasible = |p: &SdpProblem<T>| {
        let out = ipm::solve(&p.standard_form(T::zero()), &options());
        match out.status {
            SolverStatus::Optimal => Some(true),
            SolverStatus::PrimalInfeasible => Some(false),
            _ => None,
        }
    };
    let gram = problem.subset(|f| f != ConstraintFamily::Observation, true);
    let obs = problem.subset(|f| f != ConstraintFamily::Gram, true);
    match (feasible(&gram), feasible(&obs)) {
        (Some(false), _) => InfeasibleFamily::Gram,
        (_, Some(false)) => InfeasibleFamily::Observation,
        (Some(true), Some(true)) => InfeasibleFamily::Combination,
        _ => InfeasibleFamily::Undetermined,
    }
}

/// max tr(Ê_ph Ĝ) over the feasible set.
pub fn solve_primal<T: Real>(problem: &SdpProblem<T>) -> Result<PrimalSolution<T>, SdpError> {
    let out = ipm::solve(&problem.standard_form(T::zero()), &options());
    if out.status != SolverStatus::Optimal {
        return Err(status_error(problem, &out));
    }
    let g = join_blocks(&out.x, &problem.block_structure, problem.dim());
    let g = HermitianOperator::from_matrix_unchecked(g).with_blocks(problem.block_structure.clone())?;
    Ok(PrimalSolution { value: -out.pobj, g, meta: meta_of(&out) })
}

/// δ = 1e-8·‖Ê_ph‖₂ (the relative factor comes from [`Tolerances::dual_margin`]).
pub fn default_margin<T: Real>(problem: &SdpProblem<T>) -> Result<T, SdpError> {
    Ok(Tolerances::<T>::default().dual_margin * problem.objective.spectral_norm()?)
}

/// A stalled run still yields a usable certificate when its dual iterate is feasible and the
/// gap is small: the primal side can stall on nearly singular Gram matrices, and acceptance is
/// decided by verification anyway.
fn dual_usable<T: Real>(out: &ipm::IpmOutput<T>) -> bool {
    matches!(out.status, SolverStatus::IterationLimit | SolverStatus::NumericalFailure)
        && out.residuals.dual_infeasibility <= T::lit(1e-9)
        && out.residuals.relative_gap <= T::lit(1e-6)
        && out.y.iter().all(|v| v.is_finite())
}

/// Solves min −Λ·C s.t. Ê_ph + Σλ P̂ + Ση Q̂ ⪯ −δ Î and verifies the result.
pub fn solve_dual_with_margin<T: Real>(problem: &SdpProblem<T>, margin: T) -> Result<DualCertificate<T>, SdpError> {
    if !(margin >= T::zero()) {
        return Err(SdpError::NegativeMargin(margin.to_f64_lossy()));
    }
    let out = ipm::solve(&problem.standard_form(margin), &options());
    if out.status != SolverStatus::Optimal && !dual_usable(&out) {
        return Err(status_error(problem, &out));
    }
    let mut lambda = Vec::new();
    let mut eta = Vec::new();
    for (c, y) in problem.constraints.iter().zip(&out.y) {
        match c.family {
            ConstraintFamily::Gram => lambda.push(*y),
            ConstraintFamily::Observation => eta.push(*y),
            ConstraintFamily::Structural => {}
        }
    }
    let mut cert = DualCertificate {
        bound_value: T::zero(),
        lambda,
        eta,
        margin,
        verification: VerificationReport { max_eig: T::nan(), radius: T::nan(), accepted: false },
        solver_meta: Some(meta_of(&out)),
    };
    cert.bound_value = linear_bound(&cert, &problem.p_vals(), &problem.q_vals());
    cert.verification = verify_certificate(problem, &cert);
    Ok(cert)
}

/// L = Ê_ph + Σλ_k P̂_k + Ση_l Q̂_l.
pub fn certificate_operator<T: Real>(problem: &SdpProblem<T>, cert: &DualCertificate<T>) -> Option<HermitianOperator<T>> {
    let mut l = problem.objective.clone();
    let (mut li, mut ei) = (cert.lambda.iter(), cert.eta.iter());
    for c in &problem.constraints {
        let w = match c.family {
            ConstraintFamily::Gram => *li.next()?,
            ConstraintFamily::Observation => *ei.next()?,
            ConstraintFamily::Structural => continue,
        };
        if w != T::zero() {
            l.axpy(w, &c.op);
        }
    }
    if li.next().is_some() || ei.next().is_some() {
        return None;
    }
    Some(l)
}

/// Accepts iff λ_max(L) + radius ≤ 0; blocks are checked separately.
pub fn verify_certificate<T: Real>(problem: &SdpProblem<T>, cert: &DualCertificate<T>) -> VerificationReport<T> {
    let reject = VerificationReport { max_eig: T::infinity(), radius: T::infinity(), accepted: false };
    let Some(l) = certificate_operator(problem, cert) else { return reject };
    if l.matrix().as_slice().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return reject;
    }
    let mut worst = T::neg_infinity();
    let mut radius = T::zero();
    for b in &problem.block_structure {
        let sub = HermitianOperator::from_matrix_unchecked(l.matrix().sub_block(b.start, b.start, b.len, b.len));
        match max_eigenvalue(&sub) {
            Ok(ce) => {
                if ce.value + ce.radius > worst + radius {
                    worst = ce.value;
                    radius = ce.radius;
                }
            }
            Err(_) => return reject,
        }
    }
    VerificationReport { max_eig: worst, radius, accepted: worst + radius <= T::zero() }
}

/// −Σλ_k p_k − Ση_l q_l.
pub fn linear_bound<T: Real>(cert: &DualCertificate<T>, p_vals: &[T], q_obs: &[T]) -> T {
    let a: T = cert.lambda.iter().zip(p_vals).map(|(l, p)| *l * *p).sum();
    let b: T = cert.eta.iter().zip(q_obs).map(|(e, q)| *e * *q).sum();
    -a - b
}
