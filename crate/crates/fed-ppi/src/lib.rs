//! Federated prediction-powered inference.
//!
//! Clients holding a small labeled sample and a large set of model
//! predictions compute local summary statistics; an aggregator combines
//! the summaries into confidence sets for means, quantiles, logistic and
//! linear regression coefficients without ever pooling raw data.
//!
//! The numeric core ([`stats_core`], [`federation`], [`estimators`]) is
//! generic over the scalar type via [`scalar::Real`]; the simulation
//! harness, wire protocol and CLI fix the scalar to `f64` (see the type
//! aliases at the crate root).

pub mod datagen;
pub mod estimators;
pub mod experiment;
pub mod federation;
pub(crate) mod linalg;
pub mod report;
pub mod scalar;
pub mod stats_core;
pub mod transport;

pub use scalar::Real;

/// Concrete aliases for the default `f64` instantiation.
pub type Interval64 = stats_core::Interval<f64>;
pub type MomentSummary64 = stats_core::MomentSummary<f64>;
pub type ClientSummary64 = federation::ClientSummary<f64>;
pub type GlobalSummary64 = federation::GlobalSummary<f64>;
pub type ConfidenceSet64 = federation::ConfidenceSet<f64>;
pub type GridSet64 = federation::GridSet<f64>;
pub type ClientDataset64 = estimators::ClientDataset<f64>;
pub type ParamGrid64 = estimators::ParamGrid<f64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular design matrix in {block}")]
    SingularDesign { block: String },
    #[error("unsupported parameter dimension {dim} (max {max})")]
    UnsupportedDimension { dim: usize, max: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("session timeout after {waited_secs:.1}s: have {received} of {expected} summaries{missing}")]
    SessionTimeout {
        waited_secs: f64,
        received: usize,
        expected: usize,
        /// `"; missing: a, b"` when the expected client ids are known.
        missing: String,
    },
    #[error("decode error: {0}")]
    Decode(#[from] transport::DecodeError),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code category used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Domain(_) | Error::Config(_) => 2,
            Error::Protocol(_) | Error::Decode(_) | Error::SessionTimeout { .. } => 3,
            Error::SingularDesign { .. } | Error::UnsupportedDimension { .. } => 4,
            Error::Io(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
