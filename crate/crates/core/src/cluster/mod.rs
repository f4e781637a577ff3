//! HDBSCAN over (reduced) review embeddings.
//!
//! Stages: core distances, a minimum spanning tree of the mutual-reachability
//! graph, the condensed cluster tree, and Excess-of-Mass cluster selection.
//! Everything is exact and dense, O(n^2) time with O(n) extra memory.

mod mst;
mod tree;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use mst::{core_distances, minimum_spanning_tree, mutual_reachability, MstEdge};
pub use tree::{condense_tree, extract_clusters, CondensedNode, CondensedTree, LAMBDA_INF};

use crate::reduce::euclidean;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need n > min_samples for core distances (n={n}, min_samples={min_samples})")]
    TooFewForCore { n: usize, min_samples: usize },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("weight matrix is not square")]
    NotSquare,
    #[error("weight matrix has non-finite entries")]
    NonFinite,
    #[error("invalid clustering parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FeatureRequest,
    ProblemReport,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::FeatureRequest, Category::ProblemReport];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::FeatureRequest => "feature_request",
            Category::ProblemReport => "problem_report",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::FeatureRequest => "Feature requests",
            Category::ProblemReport => "Problem reports",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cluster id or noise; serialized as an integer or the string `"noise"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClusterLabel {
    Cluster(usize),
    Noise,
}

impl ClusterLabel {
    pub fn id(self) -> Option<usize> {
        match self {
            ClusterLabel::Cluster(c) => Some(c),
            ClusterLabel::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        self == ClusterLabel::Noise
    }
}

impl Serialize for ClusterLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ClusterLabel::Cluster(c) => s.serialize_u64(*c as u64),
            ClusterLabel::Noise => s.serialize_str("noise"),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(c) => Ok(ClusterLabel::Cluster(c as usize)),
            Raw::Text(s) if s == "noise" => Ok(ClusterLabel::Noise),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("expected integer or \"noise\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdbscanParams {
    #[serde(default = "default_min_cluster_size")]
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size`.
    #[serde(default)]
    pub min_samples: Option<usize>,
}

fn default_min_cluster_size() -> usize {
    5
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: default_min_cluster_size(),
            min_samples: None,
        }
    }
}

impl HdbscanParams {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.min_cluster_size < 2 {
            return Err(ClusterError::InvalidParams("min_cluster_size must be >= 2".into()));
        }
        if self.min_samples() < 1 {
            return Err(ClusterError::InvalidParams("min_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-review cluster assignment record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub id: String,
    pub category: Category,
    pub cluster: ClusterLabel,
}

/// Relabels clusters 0..K-1 by decreasing size; equal sizes keep the order of
/// their first member.
fn renumber_by_size(labels: &[ClusterLabel]) -> Vec<ClusterLabel> {
    let mut stats: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (i, l) in labels.iter().enumerate() {
        if let ClusterLabel::Cluster(c) = l {
            let e = stats.entry(*c).or_insert((0, i));
            e.0 += 1;
        }
    }
    let mut order: Vec<(usize, usize, usize)> = stats.into_iter().map(|(c, (size, first))| (c, size, first)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let remap: std::collections::HashMap<usize, usize> =
        order.iter().enumerate().map(|(new, &(old, _, _))| (old, new)).collect();
    labels
        .iter()
        .map(|l| match l {
            ClusterLabel::Cluster(c) => ClusterLabel::Cluster(remap[c]),
            ClusterLabel::Noise => ClusterLabel::Noise,
        })
        .collect()
}

/// Full HDBSCAN; labels are row-aligned with `x`.
pub fn hdbscan(x: &[Vec<f64>], params: &HdbscanParams) -> Result<Vec<ClusterLabel>, ClusterError> {
    params.validate()?;
    let n = x.len();
    if n < params.min_cluster_size {
        log::warn!(
            "hdbscan: {n} points < min_cluster_size {}; everything is noise",
            params.min_cluster_size
        );
        return Ok(vec![ClusterLabel::Noise; n]);
    }
    let min_samples = params.min_samples().min(n - 1);
    if min_samples != params.min_samples() {
        log::warn!("hdbscan: min_samples clamped to {min_samples} for {n} points");
    }
    let core = core_distances(x, min_samples)?;
    let mst = mst::prim(n, |i, j| mutual_reachability(euclidean(&x[i], &x[j]), core[i], core[j]));
    let tree = condense_tree(n, &mst, params.min_cluster_size);
    let labels = renumber_by_size(&extract_clusters(&tree));
    debug_assert!(cluster_sizes(&labels).iter().all(|&s| s >= params.min_cluster_size));
    Ok(labels)
}

/// Member count per cluster id.
pub fn cluster_sizes(labels: &[ClusterLabel]) -> Vec<usize> {
    let k = labels.iter().filter_map(|l| l.id()).max().map_or(0, |m| m + 1);
    let mut sizes = vec![0; k];
    for c in labels.iter().filter_map(|l| l.id()) {
        sizes[c] += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blob(rng: &mut ChaCha8Rng, center: &[f64], n: usize, spread: f64) -> Vec<Vec<f64>> {
        let noise = Normal::new(0.0, spread).unwrap();
        (0..n)
            .map(|_| center.iter().map(|c| c + noise.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn two_blobs_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = blob(&mut rng, &[0.0, 0.0], 20, 0.1);
        x.extend(blob(&mut rng, &[10.0, 0.0], 20, 0.1));
        let labels = hdbscan(&x, &HdbscanParams::default()).unwrap();
        assert_eq!(cluster_sizes(&labels), [20, 20]);
        assert!(labels[..20].iter().all(|l| *l == labels[0]));
        assert!(labels[20..].iter().all(|l| *l == labels[20]));
        assert_ne!(labels[0], labels[20]);
    }

    #[test]
    fn below_min_size_is_all_noise() {
        let x = vec![vec![0.0], vec![0.1], vec![0.2], vec![0.3]];
        assert!(hdbscan(&x, &HdbscanParams::default()).unwrap().iter().all(|l| l.is_noise()));
    }

    #[test]
    fn single_blob_is_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = blob(&mut rng, &[1.0, 2.0, 3.0], 30, 0.5);
        let labels = hdbscan(&x, &HdbscanParams::default()).unwrap();
        assert_eq!(cluster_sizes(&labels).len(), 1);
    }

    #[test]
    fn tiny_ball_does_not_crash() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = blob(&mut rng, &[0.0, 0.0], 20, 1e-9);
        let labels = hdbscan(&x, &HdbscanParams::default()).unwrap();
        let sizes = cluster_sizes(&labels);
        assert!(sizes.len() <= 1 || sizes.iter().all(|&s| s >= 5));
    }

    #[test]
    fn label_serde() {
        assert_eq!(serde_json::to_string(&ClusterLabel::Cluster(3)).unwrap(), "3");
        assert_eq!(serde_json::to_string(&ClusterLabel::Noise).unwrap(), "\"noise\"");
        assert_eq!(serde_json::from_str::<ClusterLabel>("\"noise\"").unwrap(), ClusterLabel::Noise);
        assert!(serde_json::from_str::<ClusterLabel>("\"x\"").is_err());
        let rec = ClusterAssignment {
            id: "r1".into(),
            category: Category::ProblemReport,
            cluster: ClusterLabel::Cluster(0),
        };
        assert_eq!(
            serde_json::to_string(&rec).unwrap(),
            r#"{"id":"r1","category":"problem_report","cluster":0}"#
        );
    }

    #[test]
    fn renumbering_orders_by_size() {
        use ClusterLabel::*;
        let labels = [Cluster(7), Cluster(3), Cluster(3), Noise, Cluster(7), Cluster(3)];
        assert_eq!(
            renumber_by_size(&labels),
            [Cluster(1), Cluster(0), Cluster(0), Noise, Cluster(1), Cluster(0)]
        );
    }
}
