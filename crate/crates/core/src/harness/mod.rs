//! Training, evaluation, latent traversal, image statistics and the
//! configuration files behind the command-line tool.

pub mod config;
pub mod image;
pub mod metrics;
pub mod train;
pub mod traversal;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{AugmenterConfig, EvalConfig, GenDataConfig, TrainConfig, TraverseConfig, VerifyConfig};
pub use image::angle_width;
pub use metrics::{consensus_rate, evaluate_accuracy, AccuracyReport};
pub use train::{train, MetricsRow, TrainOutput, TrainReport};
pub use traversal::{latent_traversal, Traversal};

use crate::error::Result;
use crate::oracle::{verify_report, GaussianMixtureSpec, VerifyReport};

/// The random number generator every workflow derives from its seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Loads the mixture named by `cfg` and builds its confidence report.
pub fn verify_propositions(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let spec = GaussianMixtureSpec::load(&cfg.spec)?;
    verify_report(&spec, &cfg.arms, cfg.n_samples, &mut seeded_rng(cfg.seed))
}
