//! Morphology-aware curriculum contrastive learning for spatio-temporal
//! binary risk prediction.
//!
//! The pipeline runs in two phases. Phase one cuts a [`cube::DataCube`] into
//! patches and pseudo-balances them ([`balance`]). Phase two trains a
//! dual-branch model ([`model`]) with cross-entropy plus an adaptively
//! weighted contrastive term ([`losses`]) whose triplets come from one of
//! three sampling strategies ([`samplers`]). [`diagnostics`] holds the
//! evaluation metrics and latent/feature-space analyses, and [`synth`]
//! generates cubes with controlled regime heterogeneity.

pub mod balance;
pub mod config;
pub mod cube;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod model;
pub mod prepared;
pub mod samplers;
pub mod sidecar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Environment variable that forces sequential, fixed-order reductions.
pub const TEST_MODE_ENV: &str = "PIPELINE_TEST_MODE";

/// True when `PIPELINE_TEST_MODE=1`.
pub fn test_mode() -> bool {
    std::env::var(TEST_MODE_ENV).map(|v| v == "1").unwrap_or(false)
}

/// Whether order-preserving parallel iteration may be used.
pub(crate) fn parallel_enabled() -> bool {
    !test_mode()
}
