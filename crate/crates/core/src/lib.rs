//! Differentiable volumetric losses and evaluation tools for cavity-recovery
//! experiments on synthetic CT-like phantoms.
//!
//! The crate provides:
//!
//! - dense 3D scalar/boolean fields with a bit-exact on-disk format ([`volume`])
//! - separable Gaussian filtering and dyadic pyramids ([`multiscale`])
//! - a multi-scale structural-similarity loss augmented with squared
//!   cross-correlation, with analytic gradients ([`msssim`])
//! - a forward-difference smoothness penalty ([`smooth`])
//! - a Student-t negative log-likelihood with learnable degrees of freedom
//!   and scale, plus common baseline losses ([`tdist`])
//! - Adam-based fitting loops for self-supervised cavity recovery and a
//!   weakly-supervised per-voxel linear predictor ([`optim`])
//! - a deterministic cavity-phantom generator ([`phantom`])
//! - overlap and surface-distance metrics with a Wilcoxon signed-rank test
//!   ([`metrics`])
//!
//! All scalar computation runs in `f64`; volumes are stored on disk as `f32`.
//! Every operation that consumes randomness draws from a seeded splitmix64
//! stream, so results are reproducible bit-for-bit given the same inputs.

pub mod error;
pub mod metrics;
pub mod msssim;
pub mod multiscale;
pub mod optim;
pub mod phantom;
pub mod rng;
pub mod smooth;
pub mod tdist;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Volume, VolumeHeader};
