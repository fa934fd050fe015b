use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConstraintFamily, DualCertificate, SdpProblem, SolverMeta, VerificationReport};
use crate::operator::HermitianOperator;
use crate::scalar::Real;

/// On-disk certificate. Everything except `generated_at_unix` is a deterministic function of
/// the problem and solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CertificateFile<T> {
    pub protocol_hash: String,
    pub q_nom: Vec<T>,
    pub p_vals: Vec<T>,
    pub lambda: Vec<T>,
    pub eta: Vec<T>,
    pub margin: T,
    pub bound_value: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_meta: Option<SolverMeta<T>>,
    pub verification: VerificationReport<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

fn hash_op<T: Real>(h: &mut Sha256, op: &HermitianOperator<T>) {
    h.update((op.dim() as u64).to_le_bytes());
    for z in op.matrix().as_slice() {
        h.update(z.re.to_f64_lossy().to_bits().to_le_bytes());
        h.update(z.im.to_f64_lossy().to_bits().to_le_bytes());
    }
}

/// SHA-256 over the block structure, Ê_ph, every constraint operator and the Gram values.
/// Observed right-hand sides are excluded so one hash covers all observations.
pub fn protocol_hash<T: Real>(problem: &SdpProblem<T>) -> String {
    let mut h = Sha256::new();
    for b in problem.block_structure() {
        h.update((b.label as u64).to_le_bytes());
        h.update((b.start as u64).to_le_bytes());
        h.update((b.len as u64).to_le_bytes());
    }
    hash_op(&mut h, &problem.objective);
    for c in &problem.constraints {
        h.update([match c.family {
            ConstraintFamily::Gram => 0u8,
            ConstraintFamily::Observation => 1,
            ConstraintFamily::Structural => 2,
        }]);
        hash_op(&mut h, &c.op);
        if c.family == ConstraintFamily::Gram {
            h.update(c.rhs.to_f64_lossy().to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl<T: Real> CertificateFile<T> {
    pub fn new(problem: &SdpProblem<T>, cert: &DualCertificate<T>) -> Self {
        Self {
            protocol_hash: protocol_hash(problem),
            q_nom: problem.q_vals(),
            p_vals: problem.p_vals(),
            lambda: cert.lambda.clone(),
            eta: cert.eta.clone(),
            margin: cert.margin,
            bound_value: cert.bound_value,
            solver_meta: cert.solver_meta.clone(),
            verification: cert.verification,
            generated_at_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .ok()
                .map(|d| d.as_secs()),
        }
    }

    pub fn certificate(&self) -> DualCertificate<T> {
        DualCertificate {
            lambda: self.lambda.clone(),
            eta: self.eta.clone(),
            margin: self.margin,
            bound_value: self.bound_value,
            verification: self.verification,
            solver_meta: self.solver_meta.clone(),
        }
    }

    /// Body used for reproducibility comparisons.
    pub fn without_timestamp(&self) -> Self {
        Self { generated_at_unix: None, ..self.clone() }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn matches(&self, problem: &SdpProblem<T>) -> bool {
        self.protocol_hash == protocol_hash(problem)
    }
}
