use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{read_jsonl, write_json, ClassifiedRecord};
use super::{EvaluateConfig, PipelineError};
use crate::cluster::{Category, ClusterAssignment, ClusterLabel};
use crate::evaluate::{
    evaluate_classification, evaluate_clustering, LabelMetrics, NmiNormalization, PartitionPair, Prf1,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Classification,
    Clustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: EvalMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_label: Option<BTreeMap<String, LabelMetrics>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted: Option<Prf1>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NmiNormalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_size: Option<usize>,
    pub n_evaluated: usize,
}

#[derive(Deserialize)]
struct TruthCluster {
    id: String,
    cluster: String,
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read_jsonl(path).map_err(|e| PipelineError::stage("evaluate", format!("{}: {e}", path.display())))
}

fn unique<V>(rows: impl IntoIterator<Item = (String, V)>, what: &str) -> Result<BTreeMap<String, V>, PipelineError> {
    let mut map = BTreeMap::new();
    for (id, v) in rows {
        if map.insert(id.clone(), v).is_some() {
            return Err(PipelineError::stage("evaluate", format!("duplicate id {id} in {what}")));
        }
    }
    Ok(map)
}

/// Scores predictions against a ground-truth file and optionally writes the
/// report as json. For clustering, `category` restricts the assignments to
/// one stream; without it an id may appear only once.
pub fn evaluate_command(
    predictions: &Path,
    truth: &Path,
    mode: EvalMode,
    cfg: &EvaluateConfig,
    category: Option<Category>,
    out: Option<&Path>,
) -> Result<MetricReport, PipelineError> {
    let report = match mode {
        EvalMode::Classification => {
            let pred = unique(
                read::<ClassifiedRecord>(predictions)?.into_iter().map(|r| (r.id, r.labels)),
                "predictions",
            )?;
            let gold = unique(
                read::<ClassifiedRecord>(truth)?.into_iter().map(|r| (r.id, r.labels)),
                "ground truth",
            )?;
            let r = evaluate_classification(&pred, &gold).map_err(|e| PipelineError::stage("evaluate", e))?;
            MetricReport {
                mode,
                per_label: Some(r.per_label),
                weighted: Some(r.weighted),
                nmi: None,
                ari: None,
                normalization: None,
                min_size: None,
                n_evaluated: r.n_evaluated,
            }
        }
        EvalMode::Clustering => {
            let rows: Vec<ClusterAssignment> = read(predictions)?;
            let pred: BTreeMap<String, ClusterLabel> = unique(
                rows.into_iter()
                    .filter(|a| category.map_or(true, |c| a.category == c))
                    .map(|a| (a.id, a.cluster)),
                "predictions (pass a category to evaluate one stream)",
            )?;
            let gold = unique(
                read::<TruthCluster>(truth)?.into_iter().map(|t| (t.id, t.cluster)),
                "ground truth",
            )?;
            let pair = PartitionPair::from_maps(&pred, &gold).map_err(|e| PipelineError::stage("evaluate", e))?;
            let r = evaluate_clustering(&pair, cfg.min_size, cfg.nmi_normalization)
                .map_err(|e| PipelineError::stage("evaluate", e))?;
            MetricReport {
                mode,
                per_label: None,
                weighted: None,
                nmi: Some(r.nmi),
                ari: Some(r.ari),
                normalization: Some(r.normalization),
                min_size: Some(r.min_size),
                n_evaluated: r.n_evaluated,
            }
        }
    };
    if let Some(out) = out {
        write_json(out, &report).map_err(|e| PipelineError::stage("evaluate", e))?;
    }
    Ok(report)
}
