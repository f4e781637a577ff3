use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifiedReview, Label, LabelSet};
use crate::cluster::Category;
use crate::rank::RankedCluster;
use crate::review::{Corpus, Review};
use crate::summarize::ClusterSummary;

pub const CORPUS: &str = "corpus.jsonl";
pub const INGEST_ERRORS: &str = "ingest_errors.jsonl";
pub const CLASSIFIED: &str = "classified.jsonl";
pub const CLASSIFY_ERRORS: &str = "classify_errors.jsonl";
pub const ASSIGNMENTS: &str = "assignments.jsonl";
pub const SUMMARIES: &str = "summaries.jsonl";
pub const RANKED: &str = "ranked.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const RUN_RECORD: &str = "run_record.json";

pub struct IngestOutput {
    pub corpus: Corpus,
    pub malformed_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyFailure {
    pub id: String,
    pub message: String,
}

pub struct Classification {
    pub results: Vec<ClassifiedReview>,
    pub failures: Vec<ClassifyFailure>,
}

/// The part of a classification line later stages need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedRecord {
    pub id: String,
    pub labels: LabelSet,
}

impl ClassifiedRecord {
    pub fn has(&self, cat: Category) -> bool {
        match cat {
            Category::FeatureRequest => self.labels.contains(Label::FeatureRequest),
            Category::ProblemReport => self.labels.contains(Label::ProblemReport),
        }
    }
}

impl From<&ClassifiedReview> for ClassifiedRecord {
    fn from(c: &ClassifiedReview) -> Self {
        Self {
            id: c.review_id.clone(),
            labels: c.labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub category: Category,
    pub cluster: usize,
    pub summary: String,
    pub depth: usize,
    pub n_llm_calls: usize,
}

impl SummaryRecord {
    pub fn to_cluster_summary(&self) -> ClusterSummary {
        ClusterSummary {
            cluster: self.cluster,
            summary: self.summary.clone(),
            depth: self.depth,
            n_llm_calls: self.n_llm_calls,
        }
    }
}

/// Ranked clusters, one list per category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub feature_request: Vec<RankedCluster>,
    pub problem_report: Vec<RankedCluster>,
}

impl Ranked {
    pub fn get(&self, cat: Category) -> &[RankedCluster] {
        match cat {
            Category::FeatureRequest => &self.feature_request,
            Category::ProblemReport => &self.problem_report,
        }
    }
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), i + 1),
            )
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> std::io::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

/// Reloads the corpus written by the ingest stage.
pub fn load_corpus(out_dir: &Path) -> std::io::Result<Corpus> {
    let path = out_dir.join(CORPUS);
    let reviews: Vec<Review> = read_jsonl(&path)?;
    Corpus::new(reviews, path.display().to_string())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}
