//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real floating-point scalar. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerical tolerances used across the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(bound = "T: Real")]
pub struct Tolerances<T> {
    /// Hermiticity check, relative to the largest entry.
    pub hermitian: T,
    /// Off-diagonal threshold for the Jacobi eigensolver (relative to the Frobenius norm).
    pub jacobi: T,
    pub jacobi_max_sweeps: usize,
    /// Interior-point stopping tolerance on the relative gap and residuals.
    pub sdp_gap: T,
    pub sdp_max_iter: usize,
    /// Dual margin as a fraction of the objective's spectral norm.
    pub dual_margin: T,
    /// Relative tolerance used when checking concentration-bound inversions.
    pub inversion: T,
}

impl<T: Real> Default for Tolerances<T> {
    fn default() -> Self {
        let eps = T::epsilon().to_f64_lossy();
        // single precision cannot reach the double-precision targets
        let scale = if eps > 1e-10 { eps / f64::EPSILON } else { 1.0 };
        Self {
            hermitian: T::lit((1e-12 * scale).min(1e-3)),
            jacobi: T::lit(eps * 0.5),
            jacobi_max_sweeps: 100,
            sdp_gap: T::lit((1e-10 * scale.sqrt()).min(1e-4)),
            sdp_max_iter: 150,
            dual_margin: T::lit((1e-8 * scale.sqrt()).min(1e-3)),
            inversion: T::lit((1e-12 * scale).min(1e-4)),
        }
    }
}
