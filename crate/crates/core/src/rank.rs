//! Cluster importance: `(w_rev * reviews + w_th * thumbs) / (w_ra * mean_rating)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::review::Review;
use crate::summarize::ClusterSummary;

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("cluster {cluster}: mean rating {mean_rating} is below 1")]
    BadRating { cluster: usize, mean_rating: f64 },
    #[error("ranking weight {0} must be positive and finite")]
    BadWeight(&'static str),
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingWeights {
    #[serde(default = "one")]
    pub w_rev: f64,
    #[serde(default = "tenth")]
    pub w_th: f64,
    #[serde(default = "one")]
    pub w_ra: f64,
}

fn one() -> f64 {
    1.0
}

fn tenth() -> f64 {
    0.1
}

impl Default for RankingWeights {
    fn default() -> Self {
        Self {
            w_rev: 1.0,
            w_th: 0.1,
            w_ra: 1.0,
        }
    }
}

impl RankingWeights {
    pub fn validate(&self) -> Result<(), RankError> {
        for (name, w) in [("w_rev", self.w_rev), ("w_th", self.w_th), ("w_ra", self.w_ra)] {
            if !(w.is_finite() && w > 0.0) {
                return Err(RankError::BadWeight(name));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w_rev: self.w_rev * c,
            w_th: self.w_th * c,
            w_ra: self.w_ra * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster: usize,
    pub n_reviews: usize,
    pub total_thumbs: u64,
    pub mean_rating: f64,
}

impl ClusterStats {
    pub fn from_members(cluster: usize, members: &[&Review]) -> Result<Self, RankError> {
        if members.is_empty() {
            return Err(RankError::EmptyCluster(cluster));
        }
        let ratings: u64 = members.iter().map(|r| u64::from(r.rating)).sum();
        Ok(Self {
            cluster,
            n_reviews: members.len(),
            total_thumbs: members.iter().map(|r| r.thumbs_up).sum(),
            mean_rating: ratings as f64 / members.len() as f64,
        })
    }
}

pub fn cluster_score(stats: &ClusterStats, w: &RankingWeights) -> Result<f64, RankError> {
    if !(stats.mean_rating >= 1.0) {
        return Err(RankError::BadRating {
            cluster: stats.cluster,
            mean_rating: stats.mean_rating,
        });
    }
    Ok((w.w_rev * stats.n_reviews as f64 + w.w_th * stats.total_thumbs as f64) / (w.w_ra * stats.mean_rating))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCluster {
    /// 1-based.
    pub rank: usize,
    pub score: f64,
    pub stats: ClusterStats,
    pub summary: ClusterSummary,
}

/// Orders by score descending, then more reviews, then lower cluster id.
pub fn rank_clusters(
    clusters: Vec<(ClusterStats, ClusterSummary)>,
    w: &RankingWeights,
) -> Result<Vec<RankedCluster>, RankError> {
    w.validate()?;
    let mut scored = clusters
        .into_iter()
        .map(|(stats, summary)| Ok((cluster_score(&stats, w)?, stats, summary)))
        .collect::<Result<Vec<_>, RankError>>()?;
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(b.1.n_reviews.cmp(&a.1.n_reviews))
            .then(a.1.cluster.cmp(&b.1.cluster))
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, stats, summary))| RankedCluster {
            rank: i + 1,
            score,
            stats,
            summary,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(cluster: usize, n: usize, thumbs: u64, rating: f64) -> ClusterStats {
        ClusterStats {
            cluster,
            n_reviews: n,
            total_thumbs: thumbs,
            mean_rating: rating,
        }
    }

    fn summary(cluster: usize) -> ClusterSummary {
        ClusterSummary {
            cluster,
            summary: format!("cluster {cluster}"),
            depth: 0,
            n_llm_calls: 1,
        }
    }

    #[test]
    fn score_examples() {
        let w = RankingWeights::default();
        assert_eq!(cluster_score(&stats(0, 5, 0, 2.0), &w).unwrap(), 2.5);
        assert_eq!(cluster_score(&stats(0, 10, 20, 1.0), &w).unwrap(), 12.0);
        let s = stats(0, 7, 13, 3.5);
        let base = cluster_score(&s, &w).unwrap();
        assert!((cluster_score(&s, &w.scaled(3.7)).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn score_rejects_corrupt_rating() {
        assert!(cluster_score(&stats(4, 5, 0, 0.5), &RankingWeights::default()).is_err());
        assert!(cluster_score(&stats(4, 5, 0, f64::NAN), &RankingWeights::default()).is_err());
    }

    #[test]
    fn score_monotonicity() {
        let w = RankingWeights::default();
        let s = |n, t, r| cluster_score(&stats(0, n, t, r), &w).unwrap();
        assert!(s(6, 3, 2.0) > s(5, 3, 2.0));
        assert!(s(5, 4, 2.0) > s(5, 3, 2.0));
        assert!(s(5, 3, 2.5) < s(5, 3, 2.0));
    }

    #[test]
    fn rank_with_ties() {
        let input = vec![
            (stats(0, 5, 0, 2.0), summary(0)),
            (stats(1, 10, 20, 1.0), summary(1)),
            (stats(2, 5, 0, 2.0), summary(2)),
        ];
        let ranked = rank_clusters(input, &RankingWeights::default()).unwrap();
        let ids: Vec<usize> = ranked.iter().map(|r| r.stats.cluster).collect();
        assert_eq!(ids, [1, 0, 2]);
        assert_eq!(ranked.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(rank_clusters(vec![], &RankingWeights::default()).unwrap().is_empty());
    }

    #[test]
    fn weights_must_be_positive() {
        let w = RankingWeights { w_th: 0.0, ..RankingWeights::default() };
        assert_eq!(rank_clusters(vec![], &w), Err(RankError::BadWeight("w_th")));
    }

    #[test]
    fn stats_from_members() {
        let mk = |rating, thumbs| Review {
            id: "x".into(),
            app: "a".into(),
            text: "t".into(),
            rating,
            thumbs_up: thumbs,
            posted_at: None,
            language: None,
        };
        let (a, b) = (mk(1, 3), mk(4, 0));
        let s = ClusterStats::from_members(2, &[&a, &b]).unwrap();
        assert_eq!(s, stats(2, 2, 3, 2.5));
        assert!(ClusterStats::from_members(0, &[]).is_err());
    }
}
