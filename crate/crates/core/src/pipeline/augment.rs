//! Synonym-swap and word-drop augmentation of misclassified examples.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::mix_seed;
use crate::textprep::CleanedExample;

const EMBEDDED_LEXICON: &str = include_str!("../../data/synonyms_en.tsv");

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: expected `word<TAB>syn1,syn2,...`")]
    Format { line: usize },
    #[error("example {0} has fewer than two words")]
    TooShort(String),
}

/// Word → synonyms, in cleaned (lowercase) form.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    map: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn english() -> Self {
        Self::parse(EMBEDDED_LEXICON).expect("embedded lexicon is well formed")
    }

    /// One `word<TAB>syn1,syn2,...` entry per line; `#` starts a comment.
    /// Synonyms equal to their headword are ignored.
    pub fn parse(text: &str) -> Result<Self, AugmentError> {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or(AugmentError::Format { line: i + 1 })?;
            let word = word.trim().to_lowercase();
            let entry = map.entry(word.clone()).or_default();
            for s in syns.split(',').map(|s| s.trim().to_lowercase()) {
                if !s.is_empty() && s != word && !entry.contains(&s) {
                    entry.push(s);
                }
            }
        }
        map.retain(|_, v| !v.is_empty());
        Ok(Self { map })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Self {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (w, s) in pairs {
            let (w, s) = (w.as_ref().to_string(), s.as_ref().to_string());
            if w != s {
                map.entry(w).or_default().push(s);
            }
        }
        Self { map }
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.map.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transformation {
    SynonymSwap,
    WordDrop,
}

impl Transformation {
    pub fn name(self) -> &'static str {
        match self {
            Transformation::SynonymSwap => "synonym_swap",
            Transformation::WordDrop => "word_drop",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub source_id: String,
    pub transformation: Transformation,
    /// Word positions in the source text, ascending.
    pub positions: Vec<usize>,
    pub text: String,
    pub round: usize,
}

/// FNV-1a, so each example's random stream depends on its id only.
fn id_hash(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// One augmented variant of `ex`. Examples with an in-lexicon word pick
/// between swap and drop with equal odds; others always drop. One or two
/// positions are affected, and a drop keeps at least one word.
pub fn augment_one(
    ex: &CleanedExample,
    lexicon: &Lexicon,
    seed: u64,
    round: usize,
) -> Result<(CleanedExample, AugmentationRecord), AugmentError> {
    let words: Vec<&str> = ex.tokens_text.split_whitespace().collect();
    if words.len() <= 1 {
        return Err(AugmentError::TooShort(ex.id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, round as u64), id_hash(&ex.id)));
    let swappable: Vec<usize> = (0..words.len())
        .filter(|&i| lexicon.synonyms(words[i]).is_some())
        .collect();
    let swap = !swappable.is_empty() && rng.random_bool(0.5);
    let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    let (transformation, mut positions) = if swap {
        let k = rng.random_range(1..=2).min(swappable.len());
        let picked: Vec<usize> = sample(&mut rng, swappable.len(), k)
            .into_iter()
            .map(|j| swappable[j])
            .collect();
        for &p in &picked {
            let syns = lexicon.synonyms(words[p]).expect("filtered above");
            out[p] = syns[rng.random_range(0..syns.len())].clone();
        }
        (Transformation::SynonymSwap, picked)
    } else {
        let k = rng.random_range(1..=2).min(words.len() - 1);
        let picked = sample(&mut rng, words.len(), k).into_vec();
        (Transformation::WordDrop, picked)
    };
    positions.sort_unstable();
    if transformation == Transformation::WordDrop {
        for &p in positions.iter().rev() {
            out.remove(p);
        }
    }
    let text = out.join(" ");
    let record = AugmentationRecord {
        source_id: ex.id.clone(),
        transformation,
        positions,
        text: text.clone(),
        round,
    };
    let new = CleanedExample {
        id: format!("{}~r{round}", ex.id),
        tokens_text: text,
        label: ex.label,
    };
    Ok((new, record))
}

/// Augments every example that has at least two words; shorter ones are
/// skipped with a warning.
pub fn augment(
    hard: &[CleanedExample],
    lexicon: &Lexicon,
    seed: u64,
    round: usize,
) -> Vec<(CleanedExample, AugmentationRecord)> {
    hard.iter()
        .filter_map(|ex| match augment_one(ex, lexicon, seed, round) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("augmentation skipped: {e}");
                None
            }
        })
        .collect()
}
