use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::advtrain::AdvConfig;
use crate::encoder::{FusionMode, ModelConfig, DEFAULT_FUSION_HIDDEN};
use crate::ndtensor::AdamConfig;
use crate::objective::TemperatureSchedule;
use crate::textprep::DataFormat;
use crate::tokenizer::DOMAIN_TOKENS;

/// Everything one run depends on. Every field has a default, so a config
/// file only lists what it changes; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds weight init, shuffling, dropout, and augmentation. Replaces
    /// `model.seed`.
    pub seed: u64,
    pub data: DataConfig,
    /// `vocab_size` is set from the built vocabulary.
    pub model: ModelConfig,
    pub vocab: VocabConfig,
    pub schedule: TemperatureSchedule,
    pub adv: AdvConfig,
    pub train: TrainConfig,
    pub toggles: Toggles,
    pub augment: AugmentConfig,
    pub fusion: FusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            vocab: VocabConfig::default(),
            schedule: TemperatureSchedule::default(),
            adv: AdvConfig::default(),
            train: TrainConfig::default(),
            toggles: Toggles::default(),
            augment: AugmentConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Overrides detection from the file extension.
    pub format: Option<DataFormat>,
    /// Stop-word file; the embedded English list when absent.
    pub stopwords: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub target_size: usize,
    /// Tokens appended when `toggles.new_tokens` is on.
    pub new_tokens: Vec<String>,
    /// When set, use the `k` most frequent split words of train+validation
    /// instead of `new_tokens`.
    pub auto_new_tokens: Option<usize>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            target_size: 1000,
            new_tokens: DOMAIN_TOKENS.iter().map(|s| s.to_string()).collect(),
            auto_new_tokens: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub lr: f64,
    /// Fraction of all optimizer steps spent ramping the learning rate.
    pub warmup: f64,
    /// Stop after this many epochs without a better validation weighted F1.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            eval_batch_size: 128,
            lr: 2e-5,
            warmup: 0.1,
            patience: Some(5),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            warmup: self.warmup,
            ..AdamConfig::default()
        }
    }
}

/// Switches for the ablation harness. Adversarial training is toggled by
/// `adv.enabled`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub new_tokens: bool,
    /// Off means a constant α = 1.
    pub heated_loss: bool,
    pub fusion: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            new_tokens: true,
            heated_loss: true,
            fusion: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Extra training rounds, each on the set grown by the previous
    /// round's misclassified examples.
    pub rounds: usize,
    /// Synonym file; the embedded lexicon when absent.
    pub lexicon: Option<PathBuf>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            lexicon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Start from whichever of a random head and the two pass-through
    /// heads scores best on validation.
    pub warm_start: bool,
    /// Model of the second source in the ablation harness; the first
    /// source's model when absent.
    pub second_model: Option<ModelConfig>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::LogitsOnly,
            hidden: DEFAULT_FUSION_HIDDEN,
            epochs: 50,
            lr: 1e-2,
            batch_size: 64,
            warm_start: true,
            second_model: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.train.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if self.train.batch_size == 0 || self.train.eval_batch_size == 0 {
            return bad("train.batch_size and train.eval_batch_size must be positive".into());
        }
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return bad(format!("train.lr must be non-negative, got {}", self.train.lr));
        }
        if !(0.0..=1.0).contains(&self.train.warmup) {
            return bad(format!("train.warmup must lie in [0, 1], got {}", self.train.warmup));
        }
        if self.fusion.batch_size == 0 || self.fusion.hidden == 0 {
            return bad("fusion.batch_size and fusion.hidden must be positive".into());
        }
        self.adv
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(3);
        model.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// Reads JSON (`.json`) or TOML (anything else).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let is_json = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    /// Applies `key=value` overrides in order; see [`apply_override`].
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        overrides.iter().try_fold(self, |cfg, o| apply_override(&cfg, o.as_ref()))
    }

    /// `schedule` when heated loss is on, otherwise α = 1 throughout.
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        if self.toggles.heated_loss {
            self.schedule.alpha_at(epoch)
        } else {
            1.0
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets one dotted key, e.g. `adv.epsilon=0.1` or `data.train=train.tsv`.
/// The value is read as JSON when it parses, otherwise as a string. The
/// key must already exist in the schema.
pub fn apply_override(cfg: &RunConfig, assignment: &str) -> Result<RunConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let mut root = serde_json::to_value(cfg).expect("config serializes");
    let mut node = &mut root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| PipelineError::Config(format!("unknown config key `{key}`")))?;
    }
    let raw = raw.trim();
    *node = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    serde_json::from_value(root).map_err(|e| PipelineError::Config(format!("`{key}`: {e}")))
}
