//! Byte-level fusion decoding for autoregressive token models whose
//! vocabularies do not match.
//!
//! Token probabilities of each model are mapped onto a shared byte space
//! ([`byte_transform`]) and combined in a log-linear beam search
//! ([`fusion`]). [`harness`] drives synthetic experiments and the CLI.

pub mod byte_transform;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod par;
pub mod vocab;

pub use byte_transform::{
    approx_byte_score, exact_byte_marginal, next_byte_scores, refresh_cache, speculative_confidence, ByteScore,
    ModelCache,
};
pub use fusion::{decode, decode_greedy, fuse_scores, DecodeResult, FusionConfig, ModelInput};
pub use models::{Context, NGramModel, NoisyChannel, Signal, TableModel, TokenModel};
pub use vocab::{TokenId, Vocabulary};
