//! End-to-end procedure: data preparation, training with the α schedule and
//! FGM, hard-sample augmentation rounds, fusion-head training, evaluation,
//! and the ablation harness.

mod ablation;
mod artifact;
mod augment;
mod config;
mod data;
mod fusion;
pub mod synth;
mod train;

use thiserror::Error;

pub use ablation::{ablation_configs, ablation_suite, ablation_table, AblationRow, ABLATION_ROWS};
pub use artifact::{Artifact, FusedArtifact, ModelArtifact};
pub use augment::{augment, augment_one, AugmentError, AugmentationRecord, Lexicon, Transformation};
pub use config::{
    apply_override, AugmentConfig, DataConfig, FusionConfig, RunConfig, Toggles, TrainConfig, VocabConfig,
};
pub use data::{load_split, prepare_vocab, stopwords_for, Encoded, PreparedData};
pub use fusion::{run_fused_pipeline, second_source_config, train_fused, FusionOutcome};
pub(crate) use train::{lexicon_for, STREAM_AUGMENT};
pub use train::{
    evaluate, harvest_hard_samples, predict_all, run_pipeline, run_with_vocab, train, write_predictions,
    EpochRecord, Prediction, RoundRecord, RunOutcome, TrainLog, TrainOutcome,
};

use crate::advtrain::AdvError;
use crate::encoder::EncoderError;
use crate::metrics::MetricsError;
use crate::ndtensor::{CheckpointError, TensorError};
use crate::objective::ObjectiveError;
use crate::textprep::TextprepError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Textprep(#[from] TextprepError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Adv(#[from] AdvError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

impl PipelineError {
    /// Bad input (config, data files, checkpoints) rather than a failure
    /// inside a computation.
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::Config(_)
            | PipelineError::Data(_)
            | PipelineError::Io { .. }
            | PipelineError::Textprep(_)
            | PipelineError::Tokenizer(_)
            | PipelineError::Checkpoint(_)
            | PipelineError::Augment(_) => true,
            PipelineError::Adv(AdvError::InvalidConfig(_)) => true,
            PipelineError::Encoder(e) => matches!(
                e,
                EncoderError::InvalidConfig(_) | EncoderError::Checkpoint(_) | EncoderError::WidthMismatch { .. }
            ),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
