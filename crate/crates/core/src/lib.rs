//! Diversity-promoting beam search for conditional sequence models.
//!
//! - [`seqmodel`]: the model interface plus tabular, n-gram and fusion models.
//! - [`decoder`]: vanilla and sibling-penalized beam search, batch decoding,
//!   and an exhaustive argmax oracle.
//! - [`rerank`]: N-best features, linear reranking and MERT.
//! - [`metrics`]: BLEU, smoothed sentence BLEU, distinct-n, ROUGE-2.
//! - [`diverserl`]: a REINFORCE-trained policy choosing the diversity rate per input.

pub mod corpus;
pub mod decoder;
pub mod diverserl;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod rerank;
pub mod seqmodel;
pub mod synth;
pub mod vocab;

pub use decoder::{batch_decode, decode, DecodeParams, Hypothesis, LengthBounds, NBestList, Selection};
pub use error::{Error, Result};
pub use seqmodel::{next_logprobs, sequence_logprob, FusionModel, NGramLM, SequenceModel, TabularModel};
pub use vocab::{Sequence, TokenId, Vocabulary};

/// Deterministic per-item seed derived from a run seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
