//! Certified finite-size key rates for phase-matching QKD and general prepare-and-measure
//! or measurement-device-independent protocols, via a dual SDP certificate on the
//! renormalized Gram operator.

pub mod concentration;
pub mod finite_key;
pub mod linalg;
pub mod operator;
pub mod pmqkd;
pub mod protocol;
pub mod scalar;
pub mod sdp;

pub use scalar::Real;

pub type Operator = operator::HermitianOperator<f64>;
pub type Instance = protocol::ProtocolInstance<f64>;
pub type Problem = sdp::SdpProblem<f64>;
pub type Certificate = sdp::DualCertificate<f64>;
pub type Params = pmqkd::PmQkdParams<f64>;
pub type Channel = pmqkd::ChannelModel<f64>;
pub type Model = pmqkd::PmQkdModel<f64>;
pub type Budget = concentration::EpsilonBudget<f64>;
