//! Attention-based speaker naming over pre-extracted face/voice embeddings.
//!
//! The engine keeps an online-updatable knowledge store of labeled
//! face/voice pair embeddings and names the active speaker in a time
//! window by scaled dot-product attention over that store. No gradient
//! step is ever taken on the attention path; enrollment is a copy.
//!
//! Modules:
//! - [`store`]: embeddings, identities, the knowledge store, JSONL knowledge files
//! - [`attention`]: attention map, context matrix, per-window speaker decision
//! - [`pipeline`]: window manifests, streaming evaluation, majority-vote aggregation
//! - [`metrics`]: matching-pair accuracy, speaker-naming accuracy, setup-time measurement
//! - [`baselines`]: gradient-descent comparators (training-from-scratch, branch-adding)
//! - [`synth`]: seeded synthetic populations and a nearest-centroid oracle
//! - [`bench`]: the (methods x IDs x shots) benchmark grid

pub mod attention;
pub mod baselines;
pub mod bench;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod store;
pub mod synth;

pub use error::EngineError;
