//! Latent truth discovery from conflicting binary claims.
//!
//! Two engines share one data model:
//!
//! * [`rbm`]: one restricted Boltzmann machine per statement with parameters
//!   stored per source, trained by contrastive divergence.
//! * [`grbm`]: the same RBM whose per-claim parameters are produced by a
//!   feed-forward [`network`] from claim features, so sources with few or no
//!   previous claims still get a reliability estimate.
//!
//! The numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the pipeline and CLI use.

pub mod cli;
pub mod error;
pub mod eval;
pub mod grbm;
pub mod math;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod rbm;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use math::{logistic, logit};
pub use model::{
    ClaimRecord, Dataset, RateTarget, SourceId, StatementBundle, StatementId, TrainingConfig, TruthEstimate,
    DECISION_THRESHOLD, DEFAULT_SEED,
};
pub use network::{Activation, NetworkSpec};
pub use scalar::Real;

pub type RbmParameters = model::RbmParameters<f64>;
pub type StatementRbmView = rbm::StatementRbmView<f64>;
pub type GradientEstimate = rbm::GradientEstimate<f64>;
pub type NetworkParams = network::NetworkParams<f64>;
pub type Theta = network::Theta<f64>;
pub type GrbmModel = grbm::GrbmModel<f64>;
