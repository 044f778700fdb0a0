//! Coupled mixture variational autoencoders.
//!
//! Several autoencoder "arms" each infer a categorical type and a continuous
//! state for their own augmented copy of a sample; a distance penalty on the
//! simplex pushes the arms toward a common categorical assignment.
//!
//! Modules, bottom up:
//! - [`simplex`]: Aitchison geometry, CLR, exact and perturbed distances.
//! - [`oracle`]: analytic Gaussian mixtures and Monte-Carlo assignment confidence.
//! - [`diffcore`]: the reverse-mode tape, layers, reparameterizations and Adam.
//! - [`mixvae`]: one arm and its ELBO terms.
//! - [`coupling`]: the multi-arm objective.
//! - [`data`]: synthetic datasets, augmenters and persistence.
//! - [`harness`]: training, metrics, traversal, image statistics and configs.

pub mod coupling;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod mixvae;
pub mod oracle;
pub mod simplex;

pub use coupling::{BatchStats, CouplingConfig, DistanceMode};
pub use data::{AugmenterKind, Dataset};
pub use diffcore::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use mixvae::{ArmDims, ArmForward, ArmModel, Likelihood, LossTerms};
pub use oracle::{ConfidenceEstimate, GaussianMixtureSpec};
pub use simplex::{ClrVector, SigmaWeights, SimplexVector};
