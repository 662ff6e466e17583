//! Cross-domain CNN training engine for hyperspectral pixel classification.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] dense 4-D tensors, differentiable layer primitives, SGD and a
//!   finite-difference gradient oracle.
//! * [`network`] the 9-layer residual backbone, N-branch cross-domain
//!   networks with shared residual modules, transfer of the shared trunk and
//!   the binary checkpoint format.
//! * [`trainer`] single-domain, cross-domain and two-step training loops with
//!   step-decay schedules and evaluation.
//! * [`data`] ENVI raster ingestion, per-class splits, patch extraction, D4
//!   augmentation and a synthetic multi-domain generator.
//! * [`experiments`] ablation harness emitting CSV/JSON reports.

pub mod data;
pub mod error;
pub mod experiments;
pub mod network;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Random stream used everywhere in the crate. Its full state is serializable,
/// which lets checkpoints resume training bit-exactly.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Creates the crate's RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
