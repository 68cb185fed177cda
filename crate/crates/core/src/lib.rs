//! Small-transformer fine-tuning for binary short-text classification:
//! subword vocabulary with domain-token extension, a heated-up softmax
//! loss on an α schedule, FGM adversarial training on embeddings,
//! hard-sample augmentation rounds, score-level fusion of two models, and
//! support-weighted P/R/F1.
//!
//! The numeric core is generic over [`scalar::Scalar`]; the pipeline runs
//! in `f64`. The aliases below name the common instantiations.

// `!(x > 0)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advtrain;
pub mod cli;
pub mod encoder;
pub mod metrics;
pub mod ndtensor;
pub mod objective;
pub mod pipeline;
pub mod scalar;
pub mod textprep;
pub mod tokenizer;

pub type Tensor64 = ndtensor::Tensor<f64>;
pub type Tensor32 = ndtensor::Tensor<f32>;
pub type Graph64 = ndtensor::Graph<f64>;
pub type Encoder64 = encoder::EncoderModel<f64>;
pub type Encoder32 = encoder::EncoderModel<f32>;
pub type FusionHead64 = encoder::FusionHead<f64>;
