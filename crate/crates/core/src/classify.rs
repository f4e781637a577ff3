//! Zero-shot review classification through the chat gateway.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::langdetect;
use crate::review::{Corpus, Review};

pub const CLASSIFY_INSTRUCTION: &str =
    "Classify the following {lang} app review into problem report, feature request or irrelevant. Be concise.";
pub const STRICT_SUFFIX: &str = "Answer with only the category name.";
/// Batch fails when more than this fraction of reviews cannot be classified.
pub const MAX_FAILED_FRACTION: f64 = 0.10;
const PROGRESS_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    FeatureRequest,
    ProblemReport,
    Irrelevant,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::FeatureRequest => "feature_request",
            Label::ProblemReport => "problem_report",
            Label::Irrelevant => "irrelevant",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Non-empty label subset. Irrelevant is represented as "neither F nor B",
/// which makes it impossible to combine with the other two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelSet {
    feature_request: bool,
    problem_report: bool,
}

impl LabelSet {
    pub const IRRELEVANT: Self = Self {
        feature_request: false,
        problem_report: false,
    };

    pub fn new(feature_request: bool, problem_report: bool) -> Self {
        Self {
            feature_request,
            problem_report,
        }
    }

    /// Builds a set from labels; Irrelevant is dropped when F or B is present.
    pub fn from_labels<I: IntoIterator<Item = Label>>(labels: I) -> Self {
        let mut set = Self::IRRELEVANT;
        for l in labels {
            match l {
                Label::FeatureRequest => set.feature_request = true,
                Label::ProblemReport => set.problem_report = true,
                Label::Irrelevant => {}
            }
        }
        set
    }

    pub fn contains(&self, label: Label) -> bool {
        match label {
            Label::FeatureRequest => self.feature_request,
            Label::ProblemReport => self.problem_report,
            Label::Irrelevant => self.is_irrelevant(),
        }
    }

    pub fn is_irrelevant(&self) -> bool {
        !self.feature_request && !self.problem_report
    }

    pub fn labels(&self) -> Vec<Label> {
        if self.is_irrelevant() {
            return vec![Label::Irrelevant];
        }
        let mut v = Vec::with_capacity(2);
        if self.feature_request {
            v.push(Label::FeatureRequest);
        }
        if self.problem_report {
            v.push(Label::ProblemReport);
        }
        v
    }
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.labels().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<Label>::deserialize(d)?;
        if labels.is_empty() {
            return Err(serde::de::Error::custom("label list is empty"));
        }
        if labels.contains(&Label::Irrelevant) && labels.len() > 1 {
            return Err(serde::de::Error::custom("irrelevant cannot be combined with other labels"));
        }
        Ok(Self::from_labels(labels))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedReview {
    #[serde(rename = "id")]
    pub review_id: String,
    pub labels: LabelSet,
    pub parse_fallback: bool,
    pub raw_response: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no category name found in response {0:?}")]
pub struct ParseFailure(pub String);

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("{failed} of {total} reviews failed classification (limit {:.0}%)", MAX_FAILED_FRACTION * 100.0)]
    TooManyFailures { failed: usize, total: usize },
}

/// Replaces backticks when the text would close the prompt's code fence.
pub(crate) fn defuse_fence(text: &str) -> (String, bool) {
    if text.contains("```") {
        (text.replace('`', "'"), true)
    } else {
        (text.to_string(), false)
    }
}

/// Fills the classification template. The flag reports whether the review
/// text had to be sanitized.
pub fn build_classification_prompt(review_text: &str, language_name: &str) -> (String, bool) {
    let (text, sanitized) = defuse_fence(review_text);
    let prompt = format!(
        "{}\n```\n{}\n```",
        CLASSIFY_INSTRUCTION.replace("{lang}", language_name),
        text
    );
    (prompt, sanitized)
}

fn label_patterns() -> &'static [(Label, Regex); 3] {
    static PATTERNS: OnceLock<[(Label, Regex); 3]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let re = |p: &str| Regex::new(p).expect("static regex");
        [
            (Label::FeatureRequest, re(r"(?i)feature[\s_\-]*requests?")),
            (Label::ProblemReport, re(r"(?i)problem[\s_\-]*reports?")),
            (Label::Irrelevant, re(r"(?i)irrelevant")),
        ]
    })
}

pub fn parse_label_response(response: &str) -> Result<LabelSet, ParseFailure> {
    let found: Vec<Label> = label_patterns()
        .iter()
        .filter(|(_, re)| re.is_match(response))
        .map(|(l, _)| *l)
        .collect();
    if found.is_empty() {
        Err(ParseFailure(response.to_string()))
    } else {
        Ok(LabelSet::from_labels(found))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSettings {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Used when a review has no detected language.
    pub default_language: String,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            max_output_tokens: 32,
            default_language: "en".to_string(),
        }
    }
}

pub struct Classifier<'g> {
    gateway: &'g Gateway,
    settings: ClassifierSettings,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub results: Vec<ClassifiedReview>,
    /// (review id, error message) for reviews that could not be classified.
    pub failures: Vec<(String, String)>,
    pub unsupported_language: usize,
    pub sanitized: usize,
}

impl<'g> Classifier<'g> {
    pub fn new(gateway: &'g Gateway, settings: ClassifierSettings) -> Self {
        Self { gateway, settings }
    }

    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model: self.settings.model.clone(),
            system: None,
            user: prompt,
            temperature: self.settings.temperature,
            max_output_tokens: self.settings.max_output_tokens,
        }
    }

    pub fn classify_review(&self, review: &Review) -> Result<ClassifiedReview, GatewayError> {
        let code = review
            .language
            .as_deref()
            .unwrap_or(&self.settings.default_language);
        let (prompt, _) = build_classification_prompt(&review.text, &langdetect::language_name(code));
        let first = self.gateway.complete(&self.request(prompt.clone()))?;
        if let Ok(labels) = parse_label_response(&first.text) {
            return Ok(ClassifiedReview {
                review_id: review.id.clone(),
                labels,
                parse_fallback: false,
                raw_response: first.text,
            });
        }
        let second = self
            .gateway
            .complete(&self.request(format!("{prompt}\n{STRICT_SUFFIX}")))?;
        let (labels, parse_fallback) = match parse_label_response(&second.text) {
            Ok(labels) => (labels, false),
            Err(_) => {
                log::warn!("review {}: unparseable responses, falling back to irrelevant", review.id);
                (LabelSet::IRRELEVANT, true)
            }
        };
        Ok(ClassifiedReview {
            review_id: review.id.clone(),
            labels,
            parse_fallback,
            raw_response: second.text,
        })
    }

    /// Classifies concurrently (bounded by the gateway), keeping input order.
    pub fn classify_batch(&self, corpus: &Corpus) -> Result<BatchOutcome, ClassifyError> {
        let done = AtomicUsize::new(0);
        let total = corpus.len();
        let results: Vec<Result<ClassifiedReview, GatewayError>> = corpus
            .reviews
            .par_iter()
            .map(|r| {
                let out = self.classify_review(r);
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n % PROGRESS_EVERY == 0 {
                    log::info!("classified {n}/{total} reviews");
                }
                out
            })
            .collect();

        let mut outcome = BatchOutcome::default();
        for (review, res) in corpus.reviews.iter().zip(results) {
            let code = review.language.as_deref().unwrap_or(&self.settings.default_language);
            if !langdetect::is_supported(code) {
                outcome.unsupported_language += 1;
            }
            if defuse_fence(&review.text).1 {
                outcome.sanitized += 1;
            }
            match res {
                Ok(c) => outcome.results.push(c),
                Err(e) => {
                    log::warn!("review {} failed classification: {e}", review.id);
                    outcome.failures.push((review.id.clone(), e.to_string()));
                }
            }
        }
        if total > 0 && outcome.failures.len() as f64 / total as f64 > MAX_FAILED_FRACTION {
            return Err(ClassifyError::TooManyFailures {
                failed: outcome.failures.len(),
                total,
            });
        }
        Ok(outcome)
    }
}
