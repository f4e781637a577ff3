//! Review records, corpus ingestion and text normalization.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of malformed rows above which ingestion fails outright.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("rating {0} outside 1..=5")]
    RatingOutOfRange(i64),
    #[error("thumbs_up {0} is negative")]
    NegativeThumbs(i64),
    #[error("empty id")]
    EmptyId,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("{malformed} of {total} rows malformed (limit {:.0}%)", MAX_MALFORMED_FRACTION * 100.0)]
    TooManyMalformed { malformed: usize, total: usize },
    #[error("unknown input format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub app: String,
    pub text: String,
    pub rating: u8,
    pub thumbs_up: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posted_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

/// Raw row as it appears in an input file, before validation.
#[derive(Debug, Deserialize)]
struct RawRow {
    id: String,
    #[serde(default)]
    app: String,
    text: String,
    rating: i64,
    #[serde(default)]
    thumbs_up: i64,
    #[serde(default, deserialize_with = "empty_as_none")]
    posted_at: Option<DateTime<Utc>>,
    #[serde(default, deserialize_with = "empty_string_as_none")]
    language: Option<String>,
}

fn empty_as_none<'de, D>(de: D) -> Result<Option<DateTime<Utc>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw: Option<String> = Option::deserialize(de)?;
    match raw.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => DateTime::parse_from_rfc3339(s)
            .map(|t| Some(t.with_timezone(&Utc)))
            .map_err(serde::de::Error::custom),
    }
}

fn empty_string_as_none<'de, D>(de: D) -> Result<Option<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw: Option<String> = Option::deserialize(de)?;
    Ok(raw.map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()))
}

impl RawRow {
    fn validate(self) -> Result<Review, ReviewError> {
        let id = self.id.trim().to_string();
        if id.is_empty() {
            return Err(ReviewError::EmptyId);
        }
        if !(1..=5).contains(&self.rating) {
            return Err(ReviewError::RatingOutOfRange(self.rating));
        }
        if self.thumbs_up < 0 {
            return Err(ReviewError::NegativeThumbs(self.thumbs_up));
        }
        Ok(Review {
            id,
            app: self.app,
            text: normalize_text(&self.text)?,
            rating: self.rating as u8,
            thumbs_up: self.thumbs_up as u64,
            posted_at: self.posted_at,
            language: self.language,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = ReviewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(ReviewError::UnknownFormat(other.to_string())),
        }
    }
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(|e| e.parse().ok())
    }
}

/// A row that was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line (jsonl) or record (csv) number.
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub reviews: Vec<Review>,
    pub source: String,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(reviews: Vec<Review>, source: impl Into<String>) -> Result<Self, ReviewError> {
        let mut seen = HashSet::with_capacity(reviews.len());
        for r in &reviews {
            if !seen.insert(r.id.as_str()) {
                return Err(ReviewError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            reviews,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Review> {
        self.reviews.iter().find(|r| r.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Review> {
        self.reviews.iter()
    }
}

/// Result of ingesting a file: the corpus plus the per-row rejects.
#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub corpus: Corpus,
    pub errors: Vec<RowError>,
}

pub fn parse_corpus(path: &Path, format: InputFormat) -> Result<ParsedCorpus, ReviewError> {
    let io_err = |source| ReviewError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let rows: Vec<(usize, Result<RawRow, String>)> = match format {
        InputFormat::Jsonl => {
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push((
                    i + 1,
                    serde_json::from_str::<RawRow>(&line).map_err(|e| e.to_string()),
                ));
            }
            rows
        }
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(false)
                .from_reader(file);
            reader
                .deserialize::<RawRow>()
                .enumerate()
                .map(|(i, r)| (i + 1, r.map_err(|e| e.to_string())))
                .collect()
        }
    };
    collect_rows(rows, path.display().to_string())
}

fn collect_rows(
    rows: Vec<(usize, Result<RawRow, String>)>,
    source: String,
) -> Result<ParsedCorpus, ReviewError> {
    let total = rows.len();
    let mut reviews = Vec::with_capacity(total);
    let mut errors = Vec::new();
    for (row, parsed) in rows {
        match parsed.and_then(|raw| raw.validate().map_err(|e| e.to_string())) {
            Ok(review) => reviews.push(review),
            Err(message) => {
                log::warn!("skipping row {row}: {message}");
                errors.push(RowError { row, message });
            }
        }
    }
    if total > 0 && errors.len() as f64 / total as f64 > MAX_MALFORMED_FRACTION {
        return Err(ReviewError::TooManyMalformed {
            malformed: errors.len(),
            total,
        });
    }
    Ok(ParsedCorpus {
        corpus: Corpus::new(reviews, source)?,
        errors,
    })
}

/// Writes reviews as jsonl in the input schema.
pub fn write_corpus_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for review in &corpus.reviews {
        serde_json::to_writer(&mut out, review)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Trims, collapses whitespace runs to a single space and drops control characters.
/// Casing and diacritics are kept.
pub fn normalize_text(raw: &str) -> Result<String, ReviewError> {
    let cleaned: String = raw
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() {
                None
            } else {
                Some(c)
            }
        })
        .collect();
    let joined = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    if joined.is_empty() {
        Err(ReviewError::EmptyText)
    } else {
        Ok(joined)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  Best app ever!  ").unwrap(), "Best app ever!");
        assert_eq!(normalize_text("a\n\nb").unwrap(), "a b");
        assert!(matches!(normalize_text("\t\n "), Err(ReviewError::EmptyText)));
        assert_eq!(normalize_text("Problème\u{0007} récurrent").unwrap(), "Problème récurrent");
    }

    #[test]
    fn parses_wellformed_jsonl_in_order() {
        let f = write_tmp(
            concat!(
                r#"{"id":"a","app":"x","text":"first","rating":5,"thumbs_up":0}"#, "\n",
                r#"{"id":"b","app":"x","text":"second","rating":1,"thumbs_up":3,"language":"fr"}"#, "\n",
                r#"{"id":"c","app":"x","text":"third","rating":3,"thumbs_up":1,"posted_at":"2023-05-01T10:00:00Z"}"#, "\n",
            ),
            ".jsonl",
        );
        let parsed = parse_corpus(f.path(), InputFormat::Jsonl).unwrap();
        let ids: Vec<_> = parsed.corpus.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(parsed.errors.is_empty());
        assert_eq!(parsed.corpus.reviews[1].language.as_deref(), Some("fr"));
        assert!(parsed.corpus.reviews[2].posted_at.is_some());
    }

    #[test]
    fn out_of_range_rating_is_skipped_and_reported() {
        let mut lines = String::new();
        for i in 0..10 {
            let rating = if i == 4 { 6 } else { 4 };
            lines.push_str(&format!(
                r#"{{"id":"r{i}","app":"x","text":"t {i}","rating":{rating},"thumbs_up":0}}"#
            ));
            lines.push('\n');
        }
        let f = write_tmp(&lines, ".jsonl");
        let parsed = parse_corpus(f.path(), InputFormat::Jsonl).unwrap();
        assert_eq!(parsed.corpus.len(), 9);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].row, 5);
        assert!(parsed.errors[0].message.contains("rating 6"));
    }

    #[test]
    fn too_many_bad_rows_fails() {
        let f = write_tmp(
            concat!(
                r#"{"id":"a","app":"x","text":"ok","rating":5,"thumbs_up":0}"#, "\n",
                r#"{"id":"b","app":"x","text":"  ","rating":5,"thumbs_up":0}"#, "\n",
            ),
            ".jsonl",
        );
        let err = parse_corpus(f.path(), InputFormat::Jsonl).unwrap_err();
        assert!(matches!(err, ReviewError::TooManyMalformed { malformed: 1, total: 2 }));
    }

    #[test]
    fn duplicate_id_is_hard_failure() {
        let f = write_tmp(
            concat!(
                r#"{"id":"r1","app":"x","text":"one","rating":5,"thumbs_up":0}"#, "\n",
                r#"{"id":"r1","app":"x","text":"two","rating":4,"thumbs_up":0}"#, "\n",
            ),
            ".jsonl",
        );
        let err = parse_corpus(f.path(), InputFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn parses_csv_with_header() {
        let f = write_tmp(
            "id,app,text,rating,thumbs_up,posted_at,language\n\
             a,x,\"Hello, world\",5,2,,\n\
             b,x,Bonjour,2,0,2023-01-01T00:00:00Z,fr\n",
            ".csv",
        );
        let parsed = parse_corpus(f.path(), InputFormat::Csv).unwrap();
        assert_eq!(parsed.corpus.len(), 2);
        assert_eq!(parsed.corpus.reviews[0].text, "Hello, world");
        assert_eq!(parsed.corpus.reviews[0].language, None);
        assert_eq!(parsed.corpus.reviews[1].language.as_deref(), Some("fr"));
    }

    fn review_strategy() -> impl Strategy<Value = Review> {
        (
            "[a-z0-9]{1,8}",
            "[a-z]{0,6}",
            "[A-Za-zéèàç!?.,' ]{1,40}",
            1u8..=5,
            0u64..10_000,
            proptest::option::of(prop_oneof![Just("en".to_string()), Just("fr".to_string())]),
            proptest::option::of(0i64..2_000_000_000),
        )
            .prop_filter_map("text must survive normalization", |(id, app, text, rating, thumbs, lang, ts)| {
                Some(Review {
                    id,
                    app,
                    text: normalize_text(&text).ok()?,
                    rating,
                    thumbs_up: thumbs,
                    posted_at: ts.and_then(|s| DateTime::from_timestamp(s, 0)),
                    language: lang,
                })
            })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}|[ \t\n\r\u{1}a-zé]{0,40}") {
            if let Ok(once) = normalize_text(&s) {
                prop_assert_eq!(normalize_text(&once).unwrap(), once);
            }
        }

        #[test]
        fn jsonl_round_trip(reviews in proptest::collection::vec(review_strategy(), 1..12)) {
            let mut seen = HashSet::new();
            let reviews: Vec<_> = reviews.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
            let corpus = Corpus::new(reviews, "mem").unwrap();
            let mut buf = Vec::new();
            write_corpus_jsonl(&corpus, &mut buf).unwrap();
            let f = write_tmp(std::str::from_utf8(&buf).unwrap(), ".jsonl");
            let parsed = parse_corpus(f.path(), InputFormat::Jsonl).unwrap();
            prop_assert!(parsed.errors.is_empty());
            prop_assert_eq!(parsed.corpus.reviews, corpus.reviews);
        }
    }
}
