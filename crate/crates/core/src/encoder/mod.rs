//! Mini transformer encoder classifier and the score-level fusion head.
//!
//! ```text
//! ids → tok_emb + pos_emb ─┬─► [LN → MHA → +] → [LN → FF(gelu) → +] ×L → LN(CLS) → W·x + b → logits
//!                          └─ perturbation site
//! ```

mod fusion;
mod model;

use thiserror::Error;

pub use fusion::{fuse, input_width, FusionHead, FusionMode, DEFAULT_FUSION_HIDDEN};
pub use model::{BatchOutput, Bound, EncoderModel, ModelConfig, PredictedFeatures, INIT_STD};

use crate::ndtensor::{CheckpointError, TensorError};
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence of {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("fusion input width {found}, head expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// SplitMix64 finalizer over `(seed, stream)`; derives independent
/// sub-seeds for dropout sites and examples.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
