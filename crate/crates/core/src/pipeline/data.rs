use std::path::Path;

use super::{PipelineError, Result, RunConfig};
use crate::textprep::{clean_all, load_dataset, CleanedExample, DataFormat, Label, Split, StopWords};
use crate::tokenizer::{build_vocab, encode, top_split_tokens, TokenSequence, Vocabulary};

/// A cleaned example with its encoding under some vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub seq: TokenSequence,
}

impl Encoded {
    pub fn new(ex: &CleanedExample, vocab: &Vocabulary, max_len: usize) -> Self {
        Self {
            id: ex.id.clone(),
            text: ex.tokens_text.clone(),
            label: ex.label,
            seq: encode(&ex.tokens_text, vocab, max_len),
        }
    }

    pub fn all(examples: &[CleanedExample], vocab: &Vocabulary, max_len: usize) -> Vec<Self> {
        examples.iter().map(|e| Self::new(e, vocab, max_len)).collect()
    }
}

/// Loads and cleans one split; examples that clean to nothing are dropped.
pub fn load_split(
    path: &Path,
    format: Option<DataFormat>,
    split: Split,
    stopwords: &StopWords,
) -> Result<Vec<CleanedExample>> {
    let raw = load_dataset(path, format, split)?;
    let cleaned = clean_all(&raw, stopwords);
    if cleaned.is_empty() {
        return Err(PipelineError::Data(format!("{}: no usable examples", path.display())));
    }
    Ok(cleaned)
}

pub fn stopwords_for(cfg: &RunConfig) -> Result<StopWords> {
    match &cfg.data.stopwords {
        Some(p) => Ok(StopWords::from_file(p)?),
        None => Ok(StopWords::english()),
    }
}

/// Cleaned splits named by a run config.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub train: Vec<CleanedExample>,
    pub validation: Vec<CleanedExample>,
    pub test: Option<Vec<CleanedExample>>,
}

impl PreparedData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let stop = stopwords_for(cfg)?;
        let need = |p: &Option<std::path::PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| PipelineError::Config(format!("`{key}` is not set")))
        };
        let (train, validation) = (need(&cfg.data.train, "data.train")?, need(&cfg.data.validation, "data.validation")?);
        let train = load_split(&train, cfg.data.format, Split::Train, &stop)?;
        let validation = load_split(&validation, cfg.data.format, Split::Validation, &stop)?;
        let test = match &cfg.data.test {
            Some(p) => Some(load_split(p, cfg.data.format, Split::Test, &stop)?),
            None => None,
        };
        Ok(Self { train, validation, test })
    }
}

/// Builds the subword vocabulary from the training texts and, when
/// `toggles.new_tokens` is on, appends the configured (or most frequent
/// split) words.
pub fn prepare_vocab(cfg: &RunConfig, train: &[CleanedExample], validation: &[CleanedExample]) -> Result<Vocabulary> {
    let corpus: Vec<&str> = train.iter().map(|e| e.tokens_text.as_str()).collect();
    let base = build_vocab(&corpus, cfg.vocab.target_size)?;
    if !cfg.toggles.new_tokens {
        return Ok(base);
    }
    let tokens: Vec<String> = match cfg.vocab.auto_new_tokens {
        Some(k) => {
            let both: Vec<&str> = train
                .iter()
                .chain(validation)
                .map(|e| e.tokens_text.as_str())
                .collect();
            top_split_tokens(&both, &base, k).into_iter().map(|(w, _, _)| w).collect()
        }
        None => cfg.vocab.new_tokens.clone(),
    };
    let (vocab, added) = base.extend(&tokens);
    log::info!("vocabulary: {} base + {added} added tokens", base.len());
    Ok(vocab)
}
