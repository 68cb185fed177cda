//! Synthetic keyword corpora with known decision rules.
//!
//! Filler words use letters `a`–`h`; keyword family A uses `i`–`q` and
//! family B `r`–`z`, so a vocabulary built without one family cannot
//! represent its keywords at all.
//!
//! - separable: every sentence holds one keyword that fixes its label.
//! - noisy: as separable, plus a distractor word that agrees with the
//!   label 90% of the time.
//! - complementary: the keyword comes from family A or B with equal odds;
//!   fake and real keywords of a family have equal lengths.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, PreparedData, Result};
use crate::textprep::{clean_all, write_tsv, CleanedExample, Label, NewsExample, Split, StopWords};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Separable,
    Noisy,
    Complementary,
}

impl CorpusKind {
    /// Default `(train, validation, test)` sizes.
    pub fn default_sizes(self) -> (usize, usize, usize) {
        match self {
            CorpusKind::Separable => (200, 50, 50),
            CorpusKind::Noisy => (200, 50, 100),
            CorpusKind::Complementary => (300, 100, 200),
        }
    }
}

/// Keyword lists, indexed by label (`[fake, real]`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keywords {
    pub family_a: [Vec<String>; 2],
    pub family_b: [Vec<String>; 2],
    pub distractors: [Vec<String>; 2],
    pub filler: Vec<String>,
}

impl Keywords {
    pub fn family_b_words(&self) -> impl Iterator<Item = &String> {
        self.family_b.iter().flatten()
    }

    pub fn family_a_words(&self) -> impl Iterator<Item = &String> {
        self.family_a.iter().flatten()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub kind: CorpusKind,
    pub train: Vec<NewsExample>,
    pub validation: Vec<NewsExample>,
    pub test: Vec<NewsExample>,
    pub keywords: Keywords,
}

fn word(rng: &mut ChaCha8Rng, letters: &[u8], len: usize) -> String {
    (0..len)
        .map(|_| letters[rng.random_range(0..letters.len())] as char)
        .collect()
}

fn unique_words(
    rng: &mut ChaCha8Rng,
    letters: &[u8],
    lens: &[usize],
    taken: &mut BTreeSet<String>,
    stop: &StopWords,
) -> Vec<String> {
    lens.iter()
        .map(|&len| loop {
            let w = word(rng, letters, len);
            if !stop.contains(&w) && taken.insert(w.clone()) {
                break w;
            }
        })
        .collect()
}

fn letters(from: u8, to: u8) -> Vec<u8> {
    (from..=to).collect()
}

pub fn keywords(seed: u64) -> Keywords {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65_7977);
    let stop = StopWords::english();
    let mut taken = BTreeSet::new();
    let filler = unique_words(&mut rng, &letters(b'a', b'h'), &[3, 4, 4, 5, 5, 5, 6, 6].repeat(5), &mut taken, &stop);
    let lens = [5, 6, 7];
    let fam = |rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>, l: &[u8]| {
        [
            unique_words(rng, l, &lens, taken, &stop),
            unique_words(rng, l, &lens, taken, &stop),
        ]
    };
    let family_a = fam(&mut rng, &mut taken, &letters(b'i', b'q'));
    let family_b = fam(&mut rng, &mut taken, &letters(b'r', b'z'));
    let distractors = fam(&mut rng, &mut taken, &letters(b'a', b'h'));
    Keywords {
        family_a,
        family_b,
        distractors,
        filler,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, v: &'a [String]) -> &'a str {
    &v[rng.random_range(0..v.len())]
}

fn sentence(kind: CorpusKind, kw: &Keywords, label: Label, rng: &mut ChaCha8Rng) -> String {
    let y = label.index();
    let n = rng.random_range(3..=7);
    let mut words: Vec<&str> = (0..n).map(|_| pick(rng, &kw.filler)).collect();
    let family = match kind {
        CorpusKind::Complementary if rng.random_bool(0.5) => &kw.family_b,
        _ => &kw.family_a,
    };
    let k = pick(rng, &family[y]);
    let at = rng.random_range(0..=words.len());
    words.insert(at, k);
    if kind == CorpusKind::Noisy {
        let d = if rng.random_bool(0.9) { y } else { 1 - y };
        let at = rng.random_range(0..=words.len());
        words.insert(at, pick(rng, &kw.distractors[d]));
    }
    words.join(" ")
}

pub fn synthesize(kind: CorpusKind, sizes: (usize, usize, usize), seed: u64) -> SynthCorpus {
    let kw = keywords(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |n: usize, split: Split, prefix: &str| -> Vec<NewsExample> {
        (0..n)
            .map(|i| {
                let label = if rng.random_bool(0.5) { Label::Real } else { Label::Fake };
                NewsExample {
                    id: format!("{prefix}{i:04}"),
                    raw_text: sentence(kind, &kw, label, &mut rng),
                    label,
                    split,
                }
            })
            .collect()
    };
    let train = make(sizes.0, Split::Train, "tr");
    let validation = make(sizes.1, Split::Validation, "va");
    let test = make(sizes.2, Split::Test, "te");
    SynthCorpus {
        kind,
        train,
        validation,
        test,
        keywords: kw,
    }
}

impl SynthCorpus {
    pub fn new(kind: CorpusKind, seed: u64) -> Self {
        synthesize(kind, kind.default_sizes(), seed)
    }

    /// Cleaned splits, ready for training.
    pub fn prepared(&self) -> PreparedData {
        let stop = StopWords::english();
        PreparedData {
            train: clean_all(&self.train, &stop),
            validation: clean_all(&self.validation, &stop),
            test: Some(clean_all(&self.test, &stop)),
        }
    }

    /// Writes `train.tsv`, `validation.tsv`, `test.tsv`; returns their paths.
    pub fn write_dir(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let mut paths = Vec::new();
        for (name, split) in [
            ("train.tsv", &self.train),
            ("validation.tsv", &self.validation),
            ("test.tsv", &self.test),
        ] {
            let p = dir.join(name);
            let rows: Vec<(String, String, Label)> = split
                .iter()
                .map(|e| (e.id.clone(), e.raw_text.clone(), e.label))
                .collect();
            let f = std::fs::File::create(&p).map_err(|e| PipelineError::io(&p, e))?;
            write_tsv(std::io::BufWriter::new(f), &rows).map_err(|e| PipelineError::io(&p, e))?;
            paths.push(p);
        }
        Ok(paths.try_into().expect("three paths"))
    }

    /// The label the planted keyword implies.
    pub fn keyword_rule(&self, text: &str) -> Option<Label> {
        let kw = &self.keywords;
        text.split_whitespace().find_map(|w| {
            (0..2).find_map(|y| {
                (kw.family_a[y].iter().any(|k| k == w) || kw.family_b[y].iter().any(|k| k == w))
                    .then(|| Label::from_index(y).expect("binary"))
            })
        })
    }
}

/// Texts with the given words removed, for building a vocabulary that
/// cannot see them.
pub fn strip_words<'a>(examples: &[CleanedExample], words: impl IntoIterator<Item = &'a String>) -> Vec<CleanedExample> {
    let drop: BTreeSet<&str> = words.into_iter().map(String::as_str).collect();
    examples
        .iter()
        .map(|e| CleanedExample {
            id: e.id.clone(),
            tokens_text: e
                .tokens_text
                .split_whitespace()
                .filter(|w| !drop.contains(w))
                .collect::<Vec<_>>()
                .join(" "),
            label: e.label,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::clean_text;

    #[test]
    fn keyword_rule_is_exact() {
        for kind in [CorpusKind::Separable, CorpusKind::Noisy, CorpusKind::Complementary] {
            let c = SynthCorpus::new(kind, 3);
            for e in c.train.iter().chain(&c.validation).chain(&c.test) {
                assert_eq!(c.keyword_rule(&e.raw_text), Some(e.label));
            }
        }
    }

    #[test]
    fn cleaning_is_identity() {
        let c = SynthCorpus::new(CorpusKind::Noisy, 1);
        let stop = StopWords::english();
        for e in &c.train {
            assert_eq!(clean_text(&e.raw_text, &stop).unwrap(), e.raw_text);
        }
    }

    #[test]
    fn families_are_disjoint_alphabets() {
        let kw = keywords(5);
        assert!(kw.family_a_words().all(|w| w.bytes().all(|b| (b'i'..=b'q').contains(&b))));
        assert!(kw.family_b_words().all(|w| w.bytes().all(|b| (b'r'..=b'z').contains(&b))));
        assert!(kw.filler.iter().all(|w| w.bytes().all(|b| (b'a'..=b'h').contains(&b))));
        for fam in [&kw.family_a, &kw.family_b] {
            let la: Vec<usize> = fam[0].iter().map(String::len).collect();
            let lb: Vec<usize> = fam[1].iter().map(String::len).collect();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let a = SynthCorpus::new(CorpusKind::Separable, 8);
        let b = SynthCorpus::new(CorpusKind::Separable, 8);
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (200, 50, 50));
    }

    #[test]
    fn noisy_distractors_mostly_agree() {
        let c = synthesize(CorpusKind::Noisy, (2000, 0, 0), 2);
        let agree = c
            .train
            .iter()
            .filter(|e| {
                let y = e.label.index();
                e.raw_text.split_whitespace().any(|w| c.keywords.distractors[y].contains(&w.to_string()))
            })
            .count();
        let frac = agree as f64 / 2000.0;
        assert!((0.87..0.93).contains(&frac), "{frac}");
    }
}
