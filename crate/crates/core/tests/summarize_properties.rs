use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reviewmine_core::gateway::{Gateway, MockProvider, RetryPolicy};
use reviewmine_core::summarize::{
    build_summary_prompt, estimate_tokens, partition_reviews, Summarizer, SummarizerSettings, TokenBudget,
};

const OFFLINE_REVIEWS: [&str; 5] = [
    "Dommage que la connexion 4g soit indispensable pour fonctionner.",
    "Please for god sake make it to work offline also.",
    "Is not work offline",
    "It used to work offline. Now I have to log in just to see my old data.",
    "Useless without internet.",
];
const OFFLINE_SUMMARY: &str = "Users are disappointed that the app requires an internet connection to function and wish it could work offline like it used to.";

// Counts groups by walking the texts with a remaining-capacity counter.
fn greedy_group_count(lengths: &[usize], budget: usize) -> usize {
    let mut groups = 0;
    let mut remaining: Option<usize> = None;
    for &len in lengths {
        let len = len.min(budget);
        remaining = match remaining {
            Some(r) if len + 1 <= r => Some(r - len - 1),
            _ => {
                groups += 1;
                Some(budget - len)
            }
        };
    }
    groups
}

#[test]
fn partition_never_exceeds_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let budget = rng.gen_range(50..=4000);
        let n = rng.gen_range(1..40);
        let texts: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.gen_range(0..=(budget * 4 * 3 / 2));
                "a".repeat(len)
            })
            .collect();
        let groups = partition_reviews(&texts, &TokenBudget::new(budget)).unwrap();
        for g in &groups {
            let cost: usize = g.iter().map(|t| estimate_tokens(t)).sum::<usize>() + g.len() - 1;
            assert!(cost <= budget, "case {case}: {cost} > {budget}");
        }
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), n);
        let lengths: Vec<usize> = texts.iter().map(|t| estimate_tokens(t)).collect();
        assert_eq!(groups.len(), greedy_group_count(&lengths, budget), "case {case}");
    }
}

#[test]
fn offline_cluster_prompt_and_scripted_summary() {
    let texts: Vec<String> = OFFLINE_REVIEWS.iter().map(|s| s.to_string()).collect();
    let prompt = build_summary_prompt(&texts).unwrap();
    assert!(prompt.starts_with("Please summarize all following app reviews into one English sentence:\n```\n"));
    for line in OFFLINE_REVIEWS {
        assert!(prompt.lines().any(|l| l == line));
    }

    let mock = Arc::new(MockProvider::from_rules([("make it to work offline", OFFLINE_SUMMARY)], None));
    let gw = Gateway::new(mock.clone()).with_retry(RetryPolicy::immediate());
    let s = Summarizer::new(&gw, TokenBudget::default(), SummarizerSettings::default()).unwrap();
    let out = s.summarize_cluster(0, &texts).unwrap();
    assert_eq!(out.summary, OFFLINE_SUMMARY);
    assert_eq!((out.depth, out.n_llm_calls), (0, 1));
    assert_eq!(mock.calls(), vec![prompt]);
}

#[test]
fn call_count_matches_mock_log_across_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = rng.gen_range(1..30);
        let texts: Vec<String> = (0..n).map(|i| format!("{i} {}", "w".repeat(rng.gen_range(10..2000)))).collect();
        let mock = Arc::new(MockProvider::from_rules([("summarize", "A short sub-summary.")], None));
        let gw = Gateway::new(mock.clone()).with_retry(RetryPolicy::immediate());
        let s = Summarizer::new(&gw, TokenBudget::new(500), SummarizerSettings::default()).unwrap();
        let out = s.summarize_cluster(1, &texts).unwrap();
        // repeated sub-summary prompts are answered from the cache
        assert_eq!(out.n_llm_calls, mock.call_count() + gw.stats().cache_hits);
    }
}
