//! Checkpoint files that carry everything needed to classify raw text:
//! model config, vocabulary, and weights (two sources plus a head for a
//! fused pair).

use std::path::Path;

use serde_json::json;

use super::{PipelineError, Result};
use crate::encoder::{fuse, EncoderModel, FusionHead, FusionMode, ModelConfig, PredictedFeatures};
use crate::ndtensor::{softmax_scaled, Checkpoint, Tensor};
use crate::tokenizer::{encode, Vocabulary};

/// One trained encoder and its vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelArtifact {
    pub vocab: Vocabulary,
    pub model: EncoderModel<f64>,
}

impl ModelArtifact {
    pub fn features(&self, cleaned: &str) -> Result<PredictedFeatures<f64>> {
        let seq = encode(cleaned, &self.vocab, self.model.config().max_len);
        Ok(self.model.predict(&seq)?)
    }

    fn meta(&self) -> serde_json::Value {
        json!({ "model": self.model.config(), "vocab": self.vocab.to_text() })
    }

    fn from_meta(meta: &serde_json::Value, ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(meta["model"].clone())
            .map_err(|e| PipelineError::Data(format!("checkpoint model config: {e}")))?;
        let vocab_text = meta["vocab"]
            .as_str()
            .ok_or_else(|| PipelineError::Data("checkpoint has no vocabulary".into()))?;
        let vocab = Vocabulary::from_text(vocab_text)?;
        if vocab.len() != config.vocab_size {
            return Err(PipelineError::Data(format!(
                "checkpoint vocabulary has {} tokens, model expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let model = EncoderModel::from_checkpoint(config, ck, prefix)?;
        Ok(Self { vocab, model })
    }
}

/// Two frozen sources and the head over their features.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedArtifact {
    pub a: ModelArtifact,
    pub b: ModelArtifact,
    pub head: FusionHead<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)] // one per run; boxing buys nothing
pub enum Artifact {
    Single(ModelArtifact),
    Fused(FusedArtifact),
}

impl Artifact {
    /// Raw output scores for a cleaned text.
    pub fn logits(&self, cleaned: &str) -> Result<Tensor<f64>> {
        match self {
            Artifact::Single(m) => Ok(m.features(cleaned)?.logits),
            Artifact::Fused(f) => Ok(fuse(&f.head, &f.a.features(cleaned)?, &f.b.features(cleaned)?)?),
        }
    }

    /// `[p_fake, p_real]` under the plain softmax.
    pub fn probabilities(&self, cleaned: &str) -> Result<[f64; 2]> {
        let p = softmax_scaled(&self.logits(cleaned)?, 1.0)?;
        Ok([p.values()[0], p.values()[1]])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Artifact::Single(m) => {
                let mut meta = m.meta();
                meta["kind"] = json!("encoder");
                let mut ck = Checkpoint::new(meta);
                m.model.write_checkpoint(&mut ck, "enc.");
                ck
            }
            Artifact::Fused(f) => {
                let meta = json!({
                    "kind": "fused",
                    "a": f.a.meta(),
                    "b": f.b.meta(),
                    "fusion": { "mode": f.head.mode(), "hidden": f.head.fusion_hidden() },
                });
                let mut ck = Checkpoint::new(meta);
                f.a.model.write_checkpoint(&mut ck, "a.");
                f.b.model.write_checkpoint(&mut ck, "b.");
                f.head.write_checkpoint(&mut ck, "head.");
                ck
            }
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.meta["kind"].as_str() {
            Some("encoder") => Ok(Artifact::Single(ModelArtifact::from_meta(&ck.meta, ck, "enc.")?)),
            Some("fused") => {
                let a = ModelArtifact::from_meta(&ck.meta["a"], ck, "a.")?;
                let b = ModelArtifact::from_meta(&ck.meta["b"], ck, "b.")?;
                let mode: FusionMode = serde_json::from_value(ck.meta["fusion"]["mode"].clone())
                    .map_err(|e| PipelineError::Data(format!("checkpoint fusion mode: {e}")))?;
                let head = FusionHead::from_checkpoint(
                    mode,
                    a.model.config().hidden_dim,
                    b.model.config().hidden_dim,
                    ck,
                    "head.",
                )?;
                Ok(Artifact::Fused(FusedArtifact { a, b, head }))
            }
            other => Err(PipelineError::Data(format!("unknown checkpoint kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
