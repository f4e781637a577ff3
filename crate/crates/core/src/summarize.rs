//! One-sentence English summaries of review clusters.
//!
//! Clusters too large for one prompt are split into budgeted groups, each
//! group is summarized, and the sub-summaries are summarized again until a
//! single group remains.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::defuse_fence;
use crate::gateway::{ChatRequest, Gateway, GatewayError};

pub const SUMMARY_INSTRUCTION: &str = "Please summarize all following app reviews into one English sentence:";
pub const DEFAULT_MAX_TOKENS: usize = 4000;
/// Recursion levels allowed before giving up on a cluster.
pub const MAX_DEPTH: usize = 6;
/// Tokens charged for the newline between two texts of a group.
pub const SEPARATOR_TOKENS: usize = 1;

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("nothing to summarize")]
    Empty,
    #[error("no single group after {0} summarization levels")]
    DepthExceeded(usize),
    #[error("unknown token estimator {0:?}")]
    UnknownEstimator(String),
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub trait TokenEstimator: Send + Sync {
    fn id(&self) -> &str;
    fn estimate(&self, text: &str) -> usize;
    /// Longest prefix of `text` whose estimate is at most `max_tokens`.
    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str;
}

/// `ceil(utf8_bytes / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BytesPerFour;

impl TokenEstimator for BytesPerFour {
    fn id(&self) -> &str {
        "bytes/4"
    }

    fn estimate(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }

    fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        let mut end = text.len().min(max_tokens * 4);
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        &text[..end]
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    BytesPerFour.estimate(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenBudget {
    #[serde(default = "default_max_tokens")]
    pub max_tokens_per_group: usize,
    #[serde(default = "default_estimator")]
    pub estimator: String,
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

fn default_estimator() -> String {
    BytesPerFour.id().to_string()
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            max_tokens_per_group: DEFAULT_MAX_TOKENS,
            estimator: default_estimator(),
        }
    }
}

impl TokenBudget {
    pub fn new(max_tokens_per_group: usize) -> Self {
        Self {
            max_tokens_per_group,
            ..Self::default()
        }
    }

    pub fn estimator(&self) -> Result<Box<dyn TokenEstimator>, SummarizeError> {
        match self.estimator.as_str() {
            "bytes/4" => Ok(Box::new(BytesPerFour)),
            other => Err(SummarizeError::UnknownEstimator(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SummarizeError> {
        if self.max_tokens_per_group == 0 {
            return Err(SummarizeError::ZeroBudget);
        }
        self.estimator().map(|_| ())
    }
}

/// Token cost of a group: each text plus a separator between neighbours.
pub fn group_cost(texts: &[String], est: &dyn TokenEstimator) -> usize {
    let body: usize = texts.iter().map(|t| est.estimate(t)).sum();
    body + SEPARATOR_TOKENS * texts.len().saturating_sub(1)
}

/// Greedy first-fit in input order. A text longer than the whole budget is
/// truncated to it and ends up alone in its group.
pub fn partition_with(texts: &[String], max_tokens: usize, est: &dyn TokenEstimator) -> Vec<Vec<String>> {
    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut used = 0;
    for text in texts {
        let mut cost = est.estimate(text);
        let text = if cost > max_tokens {
            let cut = est.truncate(text, max_tokens);
            log::warn!("summarize: truncating a {cost}-token text to the {max_tokens}-token budget");
            cost = est.estimate(cut);
            cut
        } else {
            text
        };
        let extra = if current.is_empty() { cost } else { cost + SEPARATOR_TOKENS };
        if !current.is_empty() && used + extra > max_tokens {
            groups.push(std::mem::take(&mut current));
            used = cost;
        } else {
            used += extra;
        }
        current.push(text.to_string());
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

pub fn partition_reviews(texts: &[String], budget: &TokenBudget) -> Result<Vec<Vec<String>>, SummarizeError> {
    budget.validate()?;
    Ok(partition_with(texts, budget.max_tokens_per_group, budget.estimator()?.as_ref()))
}

pub fn build_summary_prompt(texts: &[String]) -> Result<String, SummarizeError> {
    if texts.is_empty() {
        return Err(SummarizeError::Empty);
    }
    let body: Vec<String> = texts.iter().map(|t| defuse_fence(t).0).collect();
    Ok(format!("{SUMMARY_INSTRUCTION}\n```\n{}\n```", body.join("\n")))
}

/// Bytes of prompt text that are not review content.
fn template_overhead() -> usize {
    SUMMARY_INSTRUCTION.len() + "\n```\n".len() + "\n```".len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub summary: String,
    /// 0 when one call sufficed.
    pub depth: usize,
    pub n_llm_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizerSettings {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for SummarizerSettings {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            max_output_tokens: 256,
        }
    }
}

pub struct Summarizer<'g> {
    gateway: &'g Gateway,
    budget: TokenBudget,
    estimator: Box<dyn TokenEstimator>,
    settings: SummarizerSettings,
}

impl<'g> Summarizer<'g> {
    pub fn new(gateway: &'g Gateway, budget: TokenBudget, settings: SummarizerSettings) -> Result<Self, SummarizeError> {
        budget.validate()?;
        let estimator = budget.estimator()?;
        Ok(Self {
            gateway,
            budget,
            estimator,
            settings,
        })
    }

    fn summarize_group(&self, group: &[String]) -> Result<String, SummarizeError> {
        let prompt = build_summary_prompt(group)?;
        let limit = self.budget.max_tokens_per_group + self.estimator.estimate(&" ".repeat(template_overhead()));
        assert!(
            self.estimator.estimate(&prompt) <= limit,
            "summary prompt over budget"
        );
        let mut req = ChatRequest::new(self.settings.model.clone(), prompt);
        req.temperature = self.settings.temperature;
        req.max_output_tokens = self.settings.max_output_tokens;
        Ok(self.gateway.complete(&req)?.text.trim().to_string())
    }

    pub fn summarize_cluster(&self, cluster: usize, texts: &[String]) -> Result<ClusterSummary, SummarizeError> {
        if texts.is_empty() {
            return Err(SummarizeError::Empty);
        }
        let max = self.budget.max_tokens_per_group;
        let mut level = texts.to_vec();
        let mut n_llm_calls = 0;
        for depth in 0..=MAX_DEPTH {
            let groups = partition_with(&level, max, self.estimator.as_ref());
            if groups.len() == 1 {
                let summary = self.summarize_group(&groups[0])?;
                return Ok(ClusterSummary {
                    cluster,
                    summary,
                    depth,
                    n_llm_calls: n_llm_calls + 1,
                });
            }
            log::debug!("cluster {cluster}: level {depth} has {} groups", groups.len());
            level = groups
                .par_iter()
                .map(|g| self.summarize_group(g))
                .collect::<Result<Vec<_>, _>>()?;
            n_llm_calls += groups.len();
        }
        Err(SummarizeError::DepthExceeded(MAX_DEPTH))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockProvider, RetryPolicy};
    use std::sync::Arc;

    fn texts(n: usize, tokens: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:04}{}", "x".repeat(tokens * 4 - 4))).collect()
    }

    fn sizes(groups: &[Vec<String>]) -> Vec<usize> {
        groups.iter().map(Vec::len).collect()
    }

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens(&"a".repeat(100)), 25);
        assert_eq!(estimate_tokens("été"), 2);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let s = "é".repeat(10);
        let cut = BytesPerFour.truncate(&s, 1);
        assert_eq!(cut, "éé");
    }

    #[test]
    fn greedy_partition_examples() {
        let b = TokenBudget::default();
        assert_eq!(sizes(&partition_reviews(&texts(5, 1500), &b).unwrap()), [2, 2, 1]);
        assert_eq!(sizes(&partition_reviews(&texts(9, 1500), &b).unwrap()), [2, 2, 2, 2, 1]);
        let small = texts(5, 10);
        assert_eq!(partition_reviews(&small, &b).unwrap(), vec![small.clone()]);

        let huge = vec!["y".repeat(20_000)];
        let groups = partition_reviews(&huge, &b).unwrap();
        assert_eq!(sizes(&groups), [1]);
        assert_eq!(estimate_tokens(&groups[0][0]), 4000);
    }

    #[test]
    fn prompt_template() {
        let p = build_summary_prompt(&["one".to_string(), "two".to_string()]).unwrap();
        assert_eq!(
            p,
            "Please summarize all following app reviews into one English sentence:\n```\none\ntwo\n```"
        );
        let p = build_summary_prompt(&["a ```fence``` b".to_string()]).unwrap();
        assert_eq!(p.matches("```").count(), 2);
        assert!(build_summary_prompt(&[]).is_err());
    }

    fn mock_gateway(mock: MockProvider) -> (Arc<MockProvider>, Gateway) {
        let mock = Arc::new(mock);
        (mock.clone(), Gateway::new(mock).with_retry(RetryPolicy::immediate()))
    }

    #[test]
    fn small_cluster_single_call() {
        let (mock, gw) = mock_gateway(MockProvider::from_rules([("summarize", "Short summary.")], None));
        let s = Summarizer::new(&gw, TokenBudget::default(), SummarizerSettings::default()).unwrap();
        let out = s.summarize_cluster(3, &texts(5, 20)).unwrap();
        assert_eq!(out, ClusterSummary { cluster: 3, summary: "Short summary.".into(), depth: 0, n_llm_calls: 1 });
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn oversized_cluster_recurses_once() {
        // every sub-summary is about 100 tokens
        let sub = "s".repeat(400);
        let (mock, gw) = mock_gateway(MockProvider::from_rules([("summarize", sub.as_str())], None));
        let s = Summarizer::new(&gw, TokenBudget::default(), SummarizerSettings::default()).unwrap();
        let out = s.summarize_cluster(0, &texts(9, 1500)).unwrap();
        assert_eq!((out.depth, out.n_llm_calls), (1, 6));
        assert_eq!(mock.call_count(), 6);
    }

    #[test]
    fn non_shrinking_provider_hits_depth_cap() {
        let long = "z".repeat(3000 * 4);
        let (_, gw) = mock_gateway(MockProvider::from_rules([("summarize", long.as_str())], None));
        let s = Summarizer::new(&gw, TokenBudget::default(), SummarizerSettings::default()).unwrap();
        let err = s.summarize_cluster(0, &texts(3, 3000)).unwrap_err();
        assert!(matches!(err, SummarizeError::DepthExceeded(MAX_DEPTH)));
    }

    #[test]
    fn budget_validation() {
        assert!(TokenBudget::new(0).validate().is_err());
        let b = TokenBudget { estimator: "tiktoken".into(), ..TokenBudget::default() };
        assert!(matches!(b.validate(), Err(SummarizeError::UnknownEstimator(_))));
    }
}
