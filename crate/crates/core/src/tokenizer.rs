//! Subword vocabulary, domain-token extension, and fixed-length encoding.
//!
//! The base vocabulary is grown from single characters by repeatedly merging
//! the most frequent adjacent symbol pair (ties: lexicographically smallest
//! merged string, then smallest left symbol). Encoding segments each
//! whitespace word by greedy longest-prefix match; there are no continuation
//! markers, so a word's pieces concatenate back to the word.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::ndtensor::Tensor;
use crate::scalar::Scalar;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;

pub const DEFAULT_MAX_LEN: usize = 128;
pub const MIN_TARGET_SIZE: usize = 64;

/// Marker line separating base tokens from added tokens in vocabulary files.
pub const ADDED_MARKER: &str = "#ADDED";

/// The six domain tokens added to the domain model's vocabulary.
pub const DOMAIN_TOKENS: [&str; 6] = [
    "covid-19",
    "covid19",
    "coronavirus",
    "pandemic",
    "indiafightscorona",
    "lockdown",
];

/// Standard deviation of freshly initialized embedding rows.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    CorpusEmpty,
    #[error("target vocabulary size {0} is below the minimum of {MIN_TARGET_SIZE}")]
    TargetTooSmall(usize),
    #[error("`{0}` is not an added token")]
    TokenNotAdded(String),
    #[error("embedding table has {rows} rows, base vocabulary needs {needed}")]
    TableTooSmall { rows: usize, needed: usize },
    #[error("vocabulary file: {0}")]
    Format(String),
    #[error("vocabulary i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    base_len: usize,
    max_chars: usize,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut v = Self {
            id_to_token: Vec::new(),
            token_to_id: HashMap::new(),
            base_len: 0,
            max_chars: 0,
        };
        for t in [PAD, UNK, CLS] {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, token: &str) -> bool {
        if self.token_to_id.contains_key(token) {
            return false;
        }
        let id = self.id_to_token.len() as u32;
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        if !is_special(token) {
            self.max_chars = self.max_chars.max(token.chars().count());
        }
        true
    }

    /// Builds from a complete token list (specials first) and the number of
    /// base tokens.
    pub fn from_tokens(tokens: Vec<String>, base_len: usize) -> Result<Self, TokenizerError> {
        if tokens.len() < 3 || tokens[0] != PAD || tokens[1] != UNK || tokens[2] != CLS {
            return Err(TokenizerError::Format(
                "first three tokens must be [PAD], [UNK], [CLS]".into(),
            ));
        }
        if base_len < 3 || base_len > tokens.len() {
            return Err(TokenizerError::Format(format!("bad base length {base_len}")));
        }
        let mut v = Self::with_specials();
        for t in &tokens[3..] {
            if !v.insert(t) {
                return Err(TokenizerError::Format(format!("duplicate token `{t}`")));
            }
        }
        v.base_len = base_len;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Number of tokens that precede the added (domain) tokens.
    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn added_tokens(&self) -> &[String] {
        &self.id_to_token[self.base_len..]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Appends unseen tokens with fresh top IDs; returns the new vocabulary
    /// and how many tokens were added. Empty or whitespace-bearing tokens are
    /// skipped since they can never match a word.
    pub fn extend<S: AsRef<str>>(&self, new_tokens: &[S]) -> (Vocabulary, usize) {
        let mut v = self.clone();
        let mut added = 0;
        for t in new_tokens {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                log::warn!("skipping unusable vocabulary token {t:?}");
                continue;
            }
            if v.insert(t) {
                added += 1;
            }
        }
        (v, added)
    }

    /// Greedy longest-prefix segmentation of one word.
    pub fn segment(&self, word: &str) -> Vec<u32> {
        self.segment_below(word, self.len())
    }

    /// Segmentation restricted to IDs below `limit` (e.g. the base vocabulary).
    pub fn segment_below(&self, word: &str, limit: usize) -> Vec<u32> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = bounds.len() - 1;
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let longest = (n - i).min(self.max_chars.max(1));
            let hit = (1..=longest).rev().find_map(|len| {
                self.token_to_id
                    .get(&word[bounds[i]..bounds[i + len]])
                    .filter(|&&id| (id as usize) < limit && id > CLS_ID)
                    .map(|&id| (id, len))
            });
            match hit {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(UNK_ID);
                    i += 1;
                }
            }
        }
        out
    }

    /// Joins the surface forms of non-special IDs with single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id != PAD_ID && id != CLS_ID)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, t) in self.id_to_token.iter().enumerate() {
            if i == self.base_len {
                writeln!(w, "{ADDED_MARKER}")?;
            }
            writeln!(w, "{t}")?;
        }
        if self.base_len == self.len() {
            writeln!(w, "{ADDED_MARKER}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("tokens are UTF-8")
    }

    /// Parses the one-token-per-line format. The marker line does not take
    /// an ID.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TokenizerError> {
        let mut tokens = Vec::new();
        let mut base_len = None;
        for line in r.lines() {
            let line = line?;
            if line == ADDED_MARKER {
                base_len = Some(tokens.len());
            } else {
                tokens.push(line);
            }
        }
        let base = base_len.unwrap_or(tokens.len());
        Self::from_tokens(tokens, base)
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        Self::read_from(text.as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn is_special(t: &str) -> bool {
    t == PAD || t == UNK || t == CLS
}

pub fn build_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocabulary, TokenizerError> {
    if target_size < MIN_TARGET_SIZE {
        return Err(TokenizerError::TargetTooSmall(target_size));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TokenizerError::CorpusEmpty);
    }
    let mut vocab = Vocabulary::with_specials();
    let mut alphabet: Vec<char> = counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    for c in alphabet {
        vocab.insert(&c.to_string());
    }
    let mut words: Vec<(Vec<String>, usize)> = counts
        .iter()
        .map(|(w, &n)| (w.chars().map(String::from).collect(), n))
        .collect();
    while vocab.len() < target_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
            }
        }
        let Some(((left, right), _)) = pairs.into_iter().min_by(|(a, na), (b, nb)| {
            nb.cmp(na)
                .then_with(|| (a.0.to_string() + a.1).cmp(&(b.0.to_string() + b.1)))
                .then_with(|| a.0.cmp(b.0))
        }) else {
            break;
        };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{right}");
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == left && syms[i + 1] == right {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        vocab.insert(&merged);
    }
    vocab.base_len = vocab.len();
    Ok(vocab)
}

/// Fixed-length encoded sequence. `mask[i] == 1` iff `i < true_length`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    assert!(max_len >= 1, "max_len must hold at least the CLS token");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    'words: for w in text.split_whitespace() {
        for id in vocab.segment(w) {
            if ids.len() == max_len {
                break 'words;
            }
            ids.push(id);
        }
    }
    let true_length = ids.len();
    ids.resize(max_len, PAD_ID);
    let mask = (0..max_len).map(|i| u8::from(i < true_length)).collect();
    TokenSequence {
        ids,
        mask,
        true_length,
    }
}

/// Initial embedding row for an added token: the mean of the rows of its
/// base-vocabulary segmentation, or a fresh `N(0, 0.02²)` sample when every
/// piece is unknown.
pub fn init_added_token_embedding<T: Scalar, R: Rng + ?Sized>(
    vocab: &Vocabulary,
    embedding_table: &Tensor<T>,
    token: &str,
    rng: &mut R,
) -> Result<Vec<T>, TokenizerError> {
    if !vocab.added_tokens().iter().any(|t| t == token) {
        return Err(TokenizerError::TokenNotAdded(token.to_string()));
    }
    let (rows, cols) = embedding_table.dims2();
    if rows < vocab.base_len() {
        return Err(TokenizerError::TableTooSmall {
            rows,
            needed: vocab.base_len(),
        });
    }
    let pieces = vocab.segment_below(token, vocab.base_len());
    if pieces.iter().all(|&id| id == UNK_ID) {
        return Ok(Tensor::<T>::randn(&[cols], EMBEDDING_INIT_STD, rng).into_values());
    }
    let mut row = vec![T::zero(); cols];
    for &id in &pieces {
        for (acc, &v) in row.iter_mut().zip(embedding_table.row(id as usize)) {
            *acc += v;
        }
    }
    let n = T::lit(pieces.len() as f64);
    row.iter_mut().for_each(|v| *v /= n);
    Ok(row)
}

/// Words of `corpus` that split into two or more pieces, most frequent
/// first (ties lexicographic). Returns `(word, count, pieces)`.
pub fn top_split_tokens<S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocabulary,
    k: usize,
) -> Vec<(String, usize, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut split: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter_map(|(w, n)| {
            let pieces = vocab.segment(w).len();
            (pieces >= 2).then(|| (w.to_string(), n, pieces))
        })
        .collect();
    split.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    split.truncate(k);
    split
}
