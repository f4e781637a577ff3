//! Character n-gram rank-profile language identification.
//!
//! A profile keeps the most frequent 1- to 3-grams of a language, ranked by
//! frequency. A text is attributed to the profile with the smallest
//! out-of-place distance between the text's own ranking and the profile's.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub const MAX_PROFILE_LEN: usize = 300;
pub const MIN_SAMPLE_CHARS: usize = 1000;
pub const MIN_DETECT_CHARS: usize = 3;
const MAX_NGRAM: usize = 3;
const PAD: char = '_';

#[derive(Debug, Error)]
pub enum LangError {
    #[error("profile samples too short: {chars} characters, need at least {MIN_SAMPLE_CHARS}")]
    InsufficientSamples { chars: usize },
    #[error("text too short or without letters for reliable detection")]
    UnreliableDetection,
    #[error("at least two profiles are required, got {0}")]
    NotEnoughProfiles(usize),
    #[error("malformed profile line {line}: {reason}")]
    MalformedProfile { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageProfile {
    language: String,
    ranks: HashMap<String, usize>,
}

impl LanguageProfile {
    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank(&self, ngram: &str) -> Option<usize> {
        self.ranks.get(ngram).copied()
    }

    /// N-grams in rank order.
    pub fn ngrams(&self) -> Vec<&str> {
        let mut v: Vec<_> = self.ranks.iter().map(|(g, &r)| (r, g.as_str())).collect();
        v.sort_unstable();
        v.into_iter().map(|(_, g)| g).collect()
    }

    /// Serializes as `<ngram>\t<rank>` lines sorted by rank.
    pub fn to_profile_text(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.ngrams().into_iter().enumerate() {
            let _ = writeln!(out, "{g}\t{}", i + 1);
        }
        out
    }

    pub fn from_profile_text(language: &str, text: &str) -> Result<Self, LangError> {
        let mut ranks = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let malformed = |reason: &str| LangError::MalformedProfile {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (gram, rank) = line.split_once('\t').ok_or_else(|| malformed("missing tab"))?;
            let rank: usize = rank.trim().parse().map_err(|_| malformed("bad rank"))?;
            if rank != ranks.len() + 1 {
                return Err(malformed("ranks must be consecutive from 1"));
            }
            if gram.is_empty() || gram.chars().count() > MAX_NGRAM || gram.to_lowercase() != gram {
                return Err(malformed("n-gram must be 1-3 lowercase characters"));
            }
            if ranks.insert(gram.to_string(), rank).is_some() {
                return Err(malformed("duplicate n-gram"));
            }
        }
        if ranks.len() > MAX_PROFILE_LEN {
            return Err(LangError::MalformedProfile {
                line: MAX_PROFILE_LEN + 1,
                reason: format!("more than {MAX_PROFILE_LEN} entries"),
            });
        }
        Ok(Self {
            language: language.to_string(),
            ranks,
        })
    }

    /// Loads `<dir>/<code>.profile`, using the file stem as the language code.
    pub fn load(path: &Path) -> Result<Self, LangError> {
        let code = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Self::from_profile_text(&code, &std::fs::read_to_string(path)?)
    }
}

/// Counts 1..3-grams of each word padded with `_` on both sides.
fn ngram_counts(text: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    let lower = text.to_lowercase();
    for word in lower.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
        let chars: Vec<char> = std::iter::once(PAD)
            .chain(word.chars())
            .chain(std::iter::once(PAD))
            .collect();
        for n in 1..=MAX_NGRAM {
            for window in chars.windows(n) {
                if n == 1 && window[0] == PAD {
                    continue;
                }
                *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
            }
        }
    }
    counts
}

fn top_ranked(counts: HashMap<String, usize>) -> HashMap<String, usize> {
    let mut v: Vec<_> = counts.into_iter().collect();
    // frequency descending, then lexicographic for determinism
    v.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter()
        .take(MAX_PROFILE_LEN)
        .enumerate()
        .map(|(i, (g, _))| (g, i + 1))
        .collect()
}

pub fn build_profile(samples: &[&str], language: &str) -> Result<LanguageProfile, LangError> {
    let chars: usize = samples.iter().map(|s| s.chars().count()).sum();
    if chars < MIN_SAMPLE_CHARS {
        return Err(LangError::InsufficientSamples { chars });
    }
    let mut counts = HashMap::new();
    for s in samples {
        for (g, c) in ngram_counts(s) {
            *counts.entry(g).or_insert(0) += c;
        }
    }
    Ok(LanguageProfile {
        language: language.to_string(),
        ranks: top_ranked(counts),
    })
}

/// Out-of-place distance of a document ranking against a profile.
fn out_of_place(doc: &HashMap<String, usize>, profile: &LanguageProfile) -> usize {
    let penalty = MAX_PROFILE_LEN;
    doc.iter()
        .map(|(g, &r)| profile.rank(g).map_or(penalty, |pr| pr.abs_diff(r)))
        .sum()
}

pub fn detect_language<'a>(text: &str, profiles: &'a [LanguageProfile]) -> Result<&'a str, LangError> {
    if profiles.len() < 2 {
        return Err(LangError::NotEnoughProfiles(profiles.len()));
    }
    if text.trim().chars().count() < MIN_DETECT_CHARS {
        return Err(LangError::UnreliableDetection);
    }
    let counts = ngram_counts(text);
    if counts.is_empty() {
        return Err(LangError::UnreliableDetection);
    }
    let doc = top_ranked(counts);
    let best = profiles
        .iter()
        .min_by_key(|p| out_of_place(&doc, p))
        .expect("at least two profiles");
    Ok(best.language())
}

/// Profiles built from the bundled English and French sample text.
pub fn bundled_profiles() -> Vec<LanguageProfile> {
    const EN: &str = include_str!("../data/lang/en.txt");
    const FR: &str = include_str!("../data/lang/fr.txt");
    vec![
        build_profile(&[EN], "en").expect("bundled English sample is long enough"),
        build_profile(&[FR], "fr").expect("bundled French sample is long enough"),
    ]
}

/// English display name for an ISO-639-1 code; unknown codes are returned as-is.
pub fn language_name(code: &str) -> String {
    let name = match code {
        "en" => "English",
        "fr" => "French",
        "de" => "German",
        "es" => "Spanish",
        "it" => "Italian",
        "pt" => "Portuguese",
        "nl" => "Dutch",
        "ar" => "Arabic",
        "zh" => "Chinese",
        "ja" => "Japanese",
        other => return other.to_string(),
    };
    name.to_string()
}

/// Languages the bundled profiles cover; others are processed but counted.
pub fn is_supported(code: &str) -> bool {
    matches!(code, "en" | "fr")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_symbol_corpus_ranks_that_symbol_first() {
        let sample = "aaaa ".repeat(250);
        let p = build_profile(&[&sample], "xx").unwrap();
        assert_eq!(p.rank("a"), Some(1));
    }

    #[test]
    fn build_is_deterministic_and_ranks_are_gapless() {
        let text = include_str!("../data/lang/en.txt");
        let a = build_profile(&[text], "en").unwrap();
        let b = build_profile(&[text], "en").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), MAX_PROFILE_LEN);
        let mut ranks: Vec<_> = a.ngrams().iter().map(|g| a.rank(g).unwrap()).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=MAX_PROFILE_LEN).collect::<Vec<_>>());
        assert!(a.ngrams().iter().all(|g| g.to_lowercase() == *g));
    }

    #[test]
    fn empty_samples_rejected() {
        assert!(matches!(
            build_profile(&[], "en"),
            Err(LangError::InsufficientSamples { chars: 0 })
        ));
    }

    #[test]
    fn detects_reference_sentences() {
        let profiles = bundled_profiles();
        assert_eq!(detect_language("Problème de serveur récurrent", &profiles).unwrap(), "fr");
        assert_eq!(
            detect_language("Connection issues to the main server", &profiles).unwrap(),
            "en"
        );
    }

    #[test]
    fn short_text_is_unreliable() {
        let profiles = bundled_profiles();
        assert!(matches!(
            detect_language("ok", &profiles),
            Err(LangError::UnreliableDetection)
        ));
        assert!(matches!(
            detect_language("!!! ???", &profiles),
            Err(LangError::UnreliableDetection)
        ));
    }

    #[test]
    fn needs_two_profiles() {
        let profiles = bundled_profiles();
        assert!(matches!(
            detect_language("hello there", &profiles[..1]),
            Err(LangError::NotEnoughProfiles(1))
        ));
    }

    #[test]
    fn profile_file_round_trip() {
        let p = &bundled_profiles()[1];
        let text = p.to_profile_text();
        let back = LanguageProfile::from_profile_text("fr", &text).unwrap();
        assert_eq!(&back, p);
        assert!(LanguageProfile::from_profile_text("fr", "ab\t2\n").is_err());
        assert!(LanguageProfile::from_profile_text("fr", "ab 1\n").is_err());
    }

    #[test]
    fn text_built_from_one_profile_is_attributed_to_it() {
        // two artificial languages with disjoint alphabets
        let a = build_profile(&["abc ".repeat(300).as_str()], "aa").unwrap();
        let b = build_profile(&["xyz ".repeat(300).as_str()], "bb").unwrap();
        let profiles = vec![a, b];
        assert_eq!(detect_language("abc cab bca", &profiles).unwrap(), "aa");
        assert_eq!(detect_language("zyx xyz", &profiles).unwrap(), "bb");
    }

    #[test]
    fn names() {
        assert_eq!(language_name("en"), "English");
        assert_eq!(language_name("fr"), "French");
        assert_eq!(language_name("sw"), "sw");
    }
}
