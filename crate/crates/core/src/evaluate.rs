//! Classification metrics (per-label precision/recall/F1 and the
//! support-weighted average) and partition agreement (NMI, ARI).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Label, LabelSet};
use crate::cluster::ClusterLabel;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("all label supports are zero")]
    ZeroSupport,
    #[error("partitions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} elements, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("id sets differ; missing from predictions: {missing_pred:?}; missing from truth: {missing_truth:?}")]
    IdMismatch {
        missing_pred: Vec<String>,
        missing_truth: Vec<String>,
    },
    #[error("no evaluable clusters")]
    NothingToEvaluate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub r#fn: u64,
    pub tn: u64,
}

impl BinaryCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.r#fn += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn support(&self) -> u64 {
        self.tp + self.r#fn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn prf1(c: &BinaryCounts) -> Prf1 {
    let tp = c.tp as f64;
    let precision = ratio(tp, tp + c.fp as f64);
    let recall = ratio(tp, tp + c.r#fn as f64);
    Prf1 {
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
    }
}

/// Support-weighted mean of per-label metrics.
pub fn weighted_prf1(per_label: &[(Prf1, u64)]) -> Result<Prf1, EvalError> {
    let total: u64 = per_label.iter().map(|(_, s)| s).sum();
    if total == 0 {
        return Err(EvalError::ZeroSupport);
    }
    let w = |f: fn(&Prf1) -> f64| per_label.iter().map(|(m, s)| f(m) * *s as f64).sum::<f64>() / total as f64;
    Ok(Prf1 {
        precision: w(|m| m.precision),
        recall: w(|m| m.recall),
        f1: w(|m| m.f1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    #[serde(flatten)]
    pub metrics: Prf1,
    pub support: u64,
    pub counts: BinaryCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_label: BTreeMap<String, LabelMetrics>,
    pub weighted: Prf1,
    pub n_evaluated: usize,
}

fn check_ids<'a>(
    pred: impl Iterator<Item = &'a String>,
    truth: impl Iterator<Item = &'a String>,
) -> Result<(), EvalError> {
    let p: BTreeSet<&String> = pred.collect();
    let t: BTreeSet<&String> = truth.collect();
    if p == t {
        return Ok(());
    }
    Err(EvalError::IdMismatch {
        missing_pred: t.difference(&p).map(|s| s.to_string()).collect(),
        missing_truth: p.difference(&t).map(|s| s.to_string()).collect(),
    })
}

/// Each label is scored as its own binary problem, then support-weighted.
pub fn evaluate_classification(
    predicted: &BTreeMap<String, LabelSet>,
    truth: &BTreeMap<String, LabelSet>,
) -> Result<ClassificationReport, EvalError> {
    check_ids(predicted.keys(), truth.keys())?;
    let labels = [Label::FeatureRequest, Label::ProblemReport, Label::Irrelevant];
    let mut counts = [BinaryCounts::default(); 3];
    for (id, t) in truth {
        let p = &predicted[id];
        for (c, l) in counts.iter_mut().zip(labels) {
            c.add(p.contains(l), t.contains(l));
        }
    }
    let per_label: BTreeMap<String, LabelMetrics> = labels
        .iter()
        .zip(counts)
        .map(|(l, c)| {
            (
                l.as_str().to_string(),
                LabelMetrics {
                    metrics: prf1(&c),
                    support: c.support(),
                    counts: c,
                },
            )
        })
        .collect();
    let weighted = weighted_prf1(&per_label.values().map(|m| (m.metrics, m.support)).collect::<Vec<_>>())?;
    Ok(ClassificationReport {
        per_label,
        weighted,
        n_evaluated: truth.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
    Max,
}

fn encode<T: Hash + Eq>(xs: &[T]) -> (Vec<usize>, usize) {
    let mut ids = HashMap::new();
    let codes = xs
        .iter()
        .map(|x| {
            let next = ids.len();
            *ids.entry(x).or_insert(next)
        })
        .collect();
    (codes, ids.len())
}

struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Contingency {
    fn new<A: Hash + Eq, B: Hash + Eq>(u: &[A], v: &[B]) -> Result<Self, EvalError> {
        if u.len() != v.len() {
            return Err(EvalError::LengthMismatch(u.len(), v.len()));
        }
        let (cu, ku) = encode(u);
        let (cv, kv) = encode(v);
        let mut table = vec![vec![0; kv]; ku];
        for (&a, &b) in cu.iter().zip(&cv) {
            table[a][b] += 1;
        }
        let rows = table.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..kv).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Ok(Self { n: u.len(), table, rows, cols })
    }
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with natural-log entropies.
pub fn nmi<A: Hash + Eq, B: Hash + Eq>(u: &[A], v: &[B], norm: NmiNormalization) -> Result<f64, EvalError> {
    let c = Contingency::new(u, v)?;
    if c.n == 0 {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    let n = c.n as f64;
    let (hu, hv) = (entropy(&c.rows, n), entropy(&c.cols, n));
    if hu == 0.0 && hv == 0.0 {
        return Ok(1.0);
    }
    if hu == 0.0 || hv == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    let den = match norm {
        NmiNormalization::Arithmetic => (hu + hv) / 2.0,
        NmiNormalization::Geometric => (hu * hv).sqrt(),
        NmiNormalization::Max => hu.max(hv),
    };
    Ok((mi / den).clamp(0.0, 1.0))
}

fn pairs(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari<A: Hash + Eq, B: Hash + Eq>(u: &[A], v: &[B]) -> Result<f64, EvalError> {
    let c = Contingency::new(u, v)?;
    if c.n < 2 {
        return Err(EvalError::TooFew { need: 2, got: c.n });
    }
    let index: f64 = c.table.iter().flatten().map(|&x| pairs(x)).sum();
    let sa: f64 = c.rows.iter().map(|&x| pairs(x)).sum();
    let sb: f64 = c.cols.iter().map(|&x| pairs(x)).sum();
    let expected = sa * sb / pairs(c.n);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Predicted and true cluster labels aligned over the same ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPair {
    pub ids: Vec<String>,
    pub predicted: Vec<ClusterLabel>,
    pub truth: Vec<String>,
}

impl PartitionPair {
    pub fn from_maps(
        predicted: &BTreeMap<String, ClusterLabel>,
        truth: &BTreeMap<String, String>,
    ) -> Result<Self, EvalError> {
        check_ids(predicted.keys(), truth.keys())?;
        Ok(Self {
            ids: truth.keys().cloned().collect(),
            predicted: truth.keys().map(|id| predicted[id]).collect(),
            truth: truth.values().cloned().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn nmi(&self, norm: NmiNormalization) -> Result<f64, EvalError> {
        nmi(&self.predicted, &self.truth, norm)
    }

    pub fn ari(&self) -> Result<f64, EvalError> {
        ari(&self.predicted, &self.truth)
    }
}

/// Keeps ids whose true cluster has at least `min_size` members. Predicted
/// noise among the survivors becomes one singleton cluster per point.
pub fn filter_min_size(pair: &PartitionPair, min_size: usize) -> Result<PartitionPair, EvalError> {
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for t in &pair.truth {
        *sizes.entry(t).or_default() += 1;
    }
    let mut next = pair.predicted.iter().filter_map(|l| l.id()).max().map_or(0, |m| m + 1);
    let mut out = PartitionPair {
        ids: Vec::new(),
        predicted: Vec::new(),
        truth: Vec::new(),
    };
    for ((id, p), t) in pair.ids.iter().zip(&pair.predicted).zip(&pair.truth) {
        if sizes[t.as_str()] < min_size {
            continue;
        }
        let p = match p {
            ClusterLabel::Noise => {
                next += 1;
                ClusterLabel::Cluster(next - 1)
            }
            c => *c,
        };
        out.ids.push(id.clone());
        out.predicted.push(p);
        out.truth.push(t.clone());
    }
    if out.is_empty() {
        return Err(EvalError::NothingToEvaluate);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub nmi: f64,
    pub ari: f64,
    pub n_evaluated: usize,
    pub normalization: NmiNormalization,
    pub min_size: usize,
}

pub fn evaluate_clustering(
    pair: &PartitionPair,
    min_size: usize,
    norm: NmiNormalization,
) -> Result<ClusteringReport, EvalError> {
    let kept = filter_min_size(pair, min_size)?;
    let ari = if kept.len() < 2 { 1.0 } else { kept.ari()? };
    Ok(ClusteringReport {
        nmi: kept.nmi(norm)?,
        ari,
        n_evaluated: kept.len(),
        normalization: norm,
        min_size,
    })
}
