//! Dataset ingestion and text cleaning.
//!
//! Cleaning lowercases, cuts URLs, maps everything outside `[a-z0-9-]` to a
//! space, drops stop words, and collapses whitespace. The hyphen survives so
//! domain terms such as `covid-19` stay intact.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Substrings that start a URL; the rest of the whitespace token is cut.
const URL_MARKERS: [&str; 2] = ["http", "www."];

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("text is empty after cleaning")]
    EmptyAfterCleaning,
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: expected {expected} columns, found {found}")]
    MalformedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: unknown label `{label}`")]
    UnknownLabel { row: usize, label: String },
    #[error("row {row}: empty text")]
    EmptyText { row: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fake = 0,
    Real = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Fake),
            1 => Some(Label::Real),
            _ => None,
        }
    }

    /// Accepts `fake`/`real`/`0`/`1`, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fake" | "0" => Some(Label::Fake),
            "real" | "1" => Some(Label::Real),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Fake => "fake",
            Label::Real => "real",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsExample {
    pub id: String,
    pub raw_text: String,
    pub label: Label,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedExample {
    pub id: String,
    pub tokens_text: String,
    pub label: Label,
}

#[derive(Clone, Debug, Default)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    /// The bundled English list (`data/stopwords_en.txt`).
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_ascii_lowercase)
                .collect(),
        )
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TextprepError> {
        let path = path.as_ref();
        std::fs::read_to_string(path)
            .map(|s| Self::parse(&s))
            .map_err(|source| TextprepError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn clean_text(raw: &str, stopwords: &StopWords) -> Result<String, TextprepError> {
    let mut out = String::with_capacity(raw.len());
    for token in raw.split_whitespace() {
        let lower: String = token
            .chars()
            .map(|c| if c.is_ascii() { c.to_ascii_lowercase() } else { ' ' })
            .collect();
        let cut = URL_MARKERS
            .iter()
            .filter_map(|m| lower.find(m))
            .min()
            .unwrap_or(lower.len());
        let mapped: String = lower[..cut]
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' {
                    c
                } else {
                    ' '
                }
            })
            .collect();
        for piece in mapped.split(' ') {
            if piece.is_empty() || piece.bytes().all(|b| b == b'-') || stopwords.contains(piece) {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(piece);
        }
    }
    if out.is_empty() {
        Err(TextprepError::EmptyAfterCleaning)
    } else {
        Ok(out)
    }
}

pub fn clean_example(ex: &NewsExample, stopwords: &StopWords) -> Result<CleanedExample, TextprepError> {
    Ok(CleanedExample {
        id: ex.id.clone(),
        tokens_text: clean_text(&ex.raw_text, stopwords)?,
        label: ex.label,
    })
}

/// Cleans every example, dropping (and logging) the ones that clean to
/// nothing.
pub fn clean_all(examples: &[NewsExample], stopwords: &StopWords) -> Vec<CleanedExample> {
    examples
        .iter()
        .filter_map(|ex| match clean_example(ex, stopwords) {
            Ok(c) => Some(c),
            Err(_) => {
                log::warn!("dropping example {}: empty after cleaning", ex.id);
                None
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Tsv,
    Csv,
}

impl DataFormat {
    /// `.csv` → CSV, anything else → TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Tsv,
        }
    }

    pub fn delimiter(self) -> u8 {
        match self {
            DataFormat::Tsv => b'\t',
            DataFormat::Csv => b',',
        }
    }
}

fn reader(path: &Path, format: DataFormat) -> Result<csv::Reader<std::fs::File>, TextprepError> {
    let file = std::fs::File::open(path).map_err(|source| TextprepError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .quoting(format == DataFormat::Csv)
        .flexible(true)
        .has_headers(true)
        .from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &'static str) -> Result<usize, TextprepError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or(TextprepError::MissingColumn(name))
}

/// Reads a labeled `id<sep>text<sep>label` file. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: Option<DataFormat>,
    split: Split,
) -> Result<Vec<NewsExample>, TextprepError> {
    let path = path.as_ref();
    let format = format.unwrap_or_else(|| DataFormat::from_path(path));
    let mut rdr = reader(path, format)?;
    let headers = rdr.headers()?.clone();
    let (id_col, text_col, label_col) = (
        column(&headers, "id")?,
        column(&headers, "text")?,
        column(&headers, "label")?,
    );
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(TextprepError::MalformedRow {
                row,
                expected: headers.len(),
                found: rec.len(),
            });
        }
        let text = rec[text_col].trim();
        if text.is_empty() {
            return Err(TextprepError::EmptyText { row });
        }
        let label = Label::parse(&rec[label_col]).ok_or_else(|| TextprepError::UnknownLabel {
            row,
            label: rec[label_col].to_string(),
        })?;
        out.push(NewsExample {
            id: rec[id_col].trim().to_string(),
            raw_text: text.to_string(),
            label,
            split,
        });
    }
    Ok(out)
}

/// Reads `id<sep>text` rows for prediction; a label column is ignored.
pub fn load_texts(
    path: impl AsRef<Path>,
    format: Option<DataFormat>,
) -> Result<Vec<(String, String)>, TextprepError> {
    let path = path.as_ref();
    let format = format.unwrap_or_else(|| DataFormat::from_path(path));
    let mut rdr = reader(path, format)?;
    let headers = rdr.headers()?.clone();
    let (id_col, text_col) = (column(&headers, "id")?, column(&headers, "text")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(TextprepError::MalformedRow {
                row: i + 1,
                expected: headers.len(),
                found: rec.len(),
            });
        }
        out.push((rec[id_col].trim().to_string(), rec[text_col].trim().to_string()));
    }
    Ok(out)
}

/// Writes examples as `id\ttext\tlabel`; tabs and newlines in text become
/// spaces.
pub fn write_tsv<W: std::io::Write>(mut w: W, rows: &[(String, String, Label)]) -> std::io::Result<()> {
    writeln!(w, "id\ttext\tlabel")?;
    for (id, text, label) in rows {
        let text: String = text
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        writeln!(w, "{id}\t{text}\t{label}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// Indexed by [`Split::index`].
    pub per_split: [usize; 3],
    /// Indexed by [`Label::index`].
    pub per_label: [usize; 2],
    /// Mean number of tokens after cleaning with the bundled stop words.
    pub mean_tokens: f64,
}

pub fn dataset_stats(examples: &[NewsExample]) -> DatasetStats {
    let sw = StopWords::english();
    let mut stats = DatasetStats {
        total: examples.len(),
        ..DatasetStats::default()
    };
    let mut tokens = 0usize;
    for ex in examples {
        stats.per_split[ex.split.index()] += 1;
        stats.per_label[ex.label.index()] += 1;
        tokens += clean_text(&ex.raw_text, &sw)
            .map(|s| s.split(' ').count())
            .unwrap_or(0);
    }
    if !examples.is_empty() {
        stats.mean_tokens = tokens as f64 / examples.len() as f64;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn sw() -> StopWords {
        StopWords::english()
    }

    #[test]
    fn cleans_news_sentence() {
        assert_eq!(
            clean_text("Wearing mask can protect you from the virus.", &sw()).unwrap(),
            "wearing mask protect virus"
        );
    }

    #[test]
    fn strips_urls_and_keeps_hyphen() {
        assert_eq!(clean_text("see https://t.co/xyz COVID-19!!", &sw()).unwrap(), "covid-19");
        assert_eq!(clean_text("visit www.who.int now", &sw()).unwrap(), "visit");
        assert_eq!(clean_text("lockdown:http://x.y", &sw()).unwrap(), "lockdown");
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(clean_text("", &sw()), Err(TextprepError::EmptyAfterCleaning)));
        assert!(matches!(clean_text("the of and", &sw()), Err(TextprepError::EmptyAfterCleaning)));
        assert!(matches!(clean_text("😷 -- !!", &sw()), Err(TextprepError::EmptyAfterCleaning)));
    }

    #[test]
    fn emoji_is_a_separator() {
        assert_eq!(clean_text("mask😷works", &sw()).unwrap(), "mask works");
    }

    #[test]
    fn bundled_stopwords_size() {
        let n = sw().len();
        assert!((140..=170).contains(&n), "{n}");
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent_and_clean(s in "\\PC{0,60}") {
            if let Ok(once) = clean_text(&s, &sw()) {
                let twice = clean_text(&once, &sw()).unwrap();
                prop_assert_eq!(&twice, &once);
                prop_assert!(!once.contains("http"));
                prop_assert!(once.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == ' ' || c == '-'));
                prop_assert!(!once.contains("  "));
            }
        }

        #[test]
        fn url_heavy_inputs(prefix in "[A-Za-z]{0,5}", rest in "[A-Za-z:/.]{0,12}") {
            let s = format!("{prefix}HTTP{rest} {prefix}www.{rest}");
            if let Ok(c) = clean_text(&s, &sw()) {
                prop_assert!(!c.contains("http"));
            }
        }
    }

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_tsv_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.tsv", "id\ttext\tlabel\n1\ta real claim\treal\n2\ta hoax\tFAKE\n");
        let ex = load_dataset(&p, None, Split::Train).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].label, Label::Real);
        assert_eq!(ex[1].label, Label::Fake);
        assert_eq!(ex[1].id, "2");
        let p = write_file(&dir, "d.csv", "id,text,label\n7,\"hello, world\",1\n8,bye,0\n");
        let ex = load_dataset(&p, None, Split::Test).unwrap();
        assert_eq!(ex[0].raw_text, "hello, world");
        assert_eq!(ex[1].label, Label::Fake);
        assert_eq!(ex[1].split, Split::Test);
    }

    #[test]
    fn load_errors_carry_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.tsv", "id\ttext\tlabel\n1\tclaim\tmaybe\n");
        match load_dataset(&p, None, Split::Train) {
            Err(TextprepError::UnknownLabel { row, label }) => {
                assert_eq!(row, 1);
                assert_eq!(label, "maybe");
            }
            other => panic!("{other:?}"),
        }
        let p = write_file(&dir, "e.tsv", "id\ttext\tlabel\n1\tok\treal\n2\tmissing label\n");
        assert!(matches!(
            load_dataset(&p, None, Split::Train),
            Err(TextprepError::MalformedRow { row: 2, expected: 3, found: 2 })
        ));
        let p = write_file(&dir, "f.tsv", "id\tbody\tlabel\n");
        assert!(matches!(
            load_dataset(&p, None, Split::Train),
            Err(TextprepError::MissingColumn("text"))
        ));
    }

    fn ex(text: &str, label: Label, split: Split) -> NewsExample {
        NewsExample {
            id: text.to_string(),
            raw_text: text.to_string(),
            label,
            split,
        }
    }

    #[test]
    fn stats_examples() {
        let data = vec![
            ex("alpha beta", Label::Fake, Split::Train),
            ex("alpha beta gamma delta", Label::Fake, Split::Train),
            ex("alpha beta gamma delta epsilon zeta", Label::Real, Split::Validation),
            ex("omega", Label::Real, Split::Test),
        ];
        let s = dataset_stats(&data[..3]);
        assert_eq!(s.mean_tokens, 4.0);
        let s = dataset_stats(&data);
        assert_eq!(s.per_label, [2, 2]);
        assert_eq!(s.per_split, [2, 1, 1]);
        assert_eq!(s.per_split.iter().sum::<usize>(), s.total);
        let e = dataset_stats(&[]);
        assert_eq!(e, DatasetStats::default());
    }
}
