//! End-to-end orchestration: ingest, classify, cluster each category, summarize
//! clusters, rank them and write reports. Every stage writes its artifact to
//! the output directory so stages can also be run one at a time.

mod artifacts;
mod config;
mod evaluation;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use artifacts::*;
pub use config::*;
pub use evaluation::{evaluate_command, EvalMode, MetricReport};
pub use report::{build_report, emit_report, render_markdown, Report, ReportCluster, ReportFormat, ReportSection, Sample};

use crate::classify::{Classifier, ClassifierSettings, ClassifyError};
use crate::cluster::{hdbscan, Category, ClusterAssignment, ClusterLabel};
use crate::embed::{EmbedError, Embedder, EmbeddingProvider, HttpEmbeddingProvider, OfflineEmbedder};
use crate::gateway::{
    ChatProvider, ContentCache, Gateway, GatewayError, HttpChatProvider, MockProvider, MockScript,
    API_KEY_ENV,
};
use crate::langdetect::{bundled_profiles, detect_language};
use crate::rank::{rank_clusters, ClusterStats};
use crate::reduce::reduce;
use crate::review::{parse_corpus, Corpus, Review};
use crate::summarize::{SummarizeError, Summarizer, SummarizerSettings};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("stage {stage}: provider failure: {message}")]
    Provider { stage: &'static str, message: String },
}

impl PipelineError {
    /// 1 usage/config, 2 stage failure, 3 provider failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Stage { .. } => 2,
            PipelineError::Provider { .. } => 3,
        }
    }

    pub(crate) fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    fn provider(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Provider {
            stage,
            message: e.to_string(),
        }
    }

    fn from_gateway(stage: &'static str, e: GatewayError) -> Self {
        match e {
            GatewayError::Cache(_) | GatewayError::InvalidRequest(_) => Self::stage(stage, e),
            _ => Self::provider(stage, e),
        }
    }
}

/// Chat and embedding backends for one run.
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub embedding: Arc<dyn EmbeddingProvider>,
}

impl Providers {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, PipelineError> {
        let timeout = Duration::from_secs(cfg.timeout_secs);
        let chat: Arc<dyn ChatProvider> = match cfg.chat {
            ChatBackend::Mock => {
                let path = cfg.mock_script.as_ref().ok_or(ConfigError::Invalid {
                    key: "provider.mock_script".into(),
                    message: "required for the mock provider".into(),
                })?;
                let script = MockScript::load(path).map_err(|e| ConfigError::Invalid {
                    key: "provider.mock_script".into(),
                    message: e.to_string(),
                })?;
                Arc::new(MockProvider::new(script))
            }
            ChatBackend::Remote => Arc::new(
                HttpChatProvider::from_env(&cfg.chat_endpoint, timeout).map_err(|e| PipelineError::provider("setup", e))?,
            ),
        };
        let embedding: Arc<dyn EmbeddingProvider> = match cfg.embedding {
            EmbeddingBackend::Offline => Arc::new(OfflineEmbedder),
            EmbeddingBackend::Remote => {
                let key = std::env::var(API_KEY_ENV)
                    .map_err(|_| PipelineError::provider("setup", format!("{API_KEY_ENV} is not set")))?;
                Arc::new(
                    HttpEmbeddingProvider::new(&cfg.embedding_endpoint, &cfg.embedding_model, key, timeout)
                        .map_err(|e| PipelineError::provider("setup", e))?,
                )
            }
        };
        Ok(Self { chat, embedding })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub category: Option<Category>,
    pub reviews: usize,
    pub clusters: usize,
    pub noise: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub reviews_in: usize,
    pub malformed_rows: usize,
    pub classified: usize,
    pub unclassified: usize,
    pub parse_fallbacks: usize,
    pub feature_request: usize,
    pub problem_report: usize,
    pub both: usize,
    pub irrelevant: usize,
    pub categories: Vec<CategoryCounts>,
    pub llm_provider_calls: usize,
    pub llm_cache_hits: usize,
    pub summary_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRunRecord {
    pub version: String,
    pub timings: Vec<StageTiming>,
    pub counts: RunCounts,
    pub config: PipelineConfig,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    gateway: Gateway,
    embedder: Embedder,
    timings: Mutex<Vec<StageTiming>>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, providers: Providers) -> Self {
        let cache = &cfg.output.cache_dir;
        let gateway = Gateway::new(providers.chat)
            .with_disk_cache(ContentCache::new(cache.join("chat")))
            .with_max_in_flight(cfg.provider.max_in_flight);
        let embedder = Embedder::new(providers.embedding)
            .with_cache(ContentCache::new(cache.join("embed")))
            .with_max_in_flight(cfg.provider.max_in_flight);
        Self {
            cfg,
            gateway,
            embedder,
            timings: Mutex::new(Vec::new()),
        }
    }

    pub fn from_config(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let providers = Providers::from_config(&cfg.provider)?;
        Ok(Self::new(cfg, providers))
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.output.out_dir
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir().join(name)
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.lock().unwrap().push(StageTiming {
            stage: stage.to_string(),
            millis: start.elapsed().as_secs_f64() * 1000.0,
        });
        out
    }

    fn prepare_out_dir(&self, stage: &'static str) -> Result<(), PipelineError> {
        std::fs::create_dir_all(self.out_dir()).map_err(|e| PipelineError::stage(stage, e))
    }

    /// Reads the input file, fills in missing languages and writes
    /// `corpus.jsonl` and `ingest_errors.jsonl`.
    pub fn ingest(&self) -> Result<IngestOutput, PipelineError> {
        self.timed("ingest", || {
            self.prepare_out_dir("ingest")?;
            let path = self.cfg.input_path()?;
            let format = self.cfg.input_format()?;
            let parsed = parse_corpus(path, format).map_err(|e| PipelineError::stage("ingest", e))?;
            let profiles = bundled_profiles();
            let reviews: Vec<Review> = parsed
                .corpus
                .reviews
                .into_iter()
                .map(|mut r| {
                    if r.language.is_none() {
                        r.language = detect_language(&r.text, &profiles).ok().map(str::to_string);
                    }
                    r
                })
                .collect();
            let corpus = Corpus::new(reviews, parsed.corpus.source).map_err(|e| PipelineError::stage("ingest", e))?;
            write_jsonl(&self.artifact(CORPUS), corpus.iter()).map_err(|e| PipelineError::stage("ingest", e))?;
            write_jsonl(&self.artifact(INGEST_ERRORS), parsed.errors.iter())
                .map_err(|e| PipelineError::stage("ingest", e))?;
            log::info!("ingested {} reviews ({} rows skipped)", corpus.len(), parsed.errors.len());
            Ok(IngestOutput {
                corpus,
                malformed_rows: parsed.errors.len(),
            })
        })
    }

    pub fn classify(&self, corpus: &Corpus) -> Result<Classification, PipelineError> {
        self.timed("classify", || {
            self.prepare_out_dir("classify")?;
            let settings = ClassifierSettings {
                model: self.cfg.provider.chat_model.clone(),
                default_language: self.cfg.input.default_language.clone(),
                ..ClassifierSettings::default()
            };
            let outcome = Classifier::new(&self.gateway, settings)
                .classify_batch(corpus)
                .map_err(|e| match e {
                    ClassifyError::TooManyFailures { .. } => PipelineError::provider("classify", e),
                })?;
            if outcome.unsupported_language > 0 {
                log::warn!("{} reviews in languages other than en/fr", outcome.unsupported_language);
            }
            write_jsonl(&self.artifact(CLASSIFIED), outcome.results.iter())
                .map_err(|e| PipelineError::stage("classify", e))?;
            let failures: Vec<ClassifyFailure> = outcome
                .failures
                .into_iter()
                .map(|(id, message)| ClassifyFailure { id, message })
                .collect();
            write_jsonl(&self.artifact(CLASSIFY_ERRORS), failures.iter())
                .map_err(|e| PipelineError::stage("classify", e))?;
            Ok(Classification {
                results: outcome.results,
                failures,
            })
        })
    }

    fn cluster_category(
        &self,
        category: Category,
        members: &[&Review],
    ) -> Result<Vec<ClusterLabel>, PipelineError> {
        let params = &self.cfg.cluster;
        if members.len() < params.min_cluster_size {
            if !members.is_empty() {
                log::warn!(
                    "{category}: {} reviews < min_cluster_size {}; all noise",
                    members.len(),
                    params.min_cluster_size
                );
            }
            return Ok(vec![ClusterLabel::Noise; members.len()]);
        }
        let items: Vec<(String, String)> = members.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
        let matrix = self.embedder.embed_reviews(&items).map_err(|e| match e {
            EmbedError::Provider { .. } => PipelineError::provider("embed", e),
            e => PipelineError::stage("embed", e),
        })?;
        let reduced = reduce(
            matrix.vectors(),
            self.cfg.reduce.method,
            &self.cfg.reduce.params(self.cfg.seed),
        )
        .map_err(|e| PipelineError::stage("reduce", e))?;
        hdbscan(&reduced, params).map_err(|e| PipelineError::stage("cluster", e))
    }

    /// Embeds, reduces and clusters feature requests and problem reports as
    /// two independent streams; irrelevant reviews never reach the embedder.
    pub fn cluster(&self, corpus: &Corpus, classified: &[ClassifiedRecord]) -> Result<Vec<ClusterAssignment>, PipelineError> {
        self.timed("cluster", || {
            self.prepare_out_dir("cluster")?;
            let labels: HashMap<&str, &ClassifiedRecord> = classified.iter().map(|c| (c.id.as_str(), c)).collect();
            let members = |cat: Category| -> Vec<&Review> {
                corpus
                    .iter()
                    .filter(|r| labels.get(r.id.as_str()).is_some_and(|c| c.has(cat)))
                    .collect()
            };
            let (f, b) = (members(Category::FeatureRequest), members(Category::ProblemReport));
            let (lf, lb) = rayon::join(
                || self.cluster_category(Category::FeatureRequest, &f),
                || self.cluster_category(Category::ProblemReport, &b),
            );
            let mut out = Vec::new();
            for (cat, rs, ls) in [(Category::FeatureRequest, f, lf?), (Category::ProblemReport, b, lb?)] {
                out.extend(rs.iter().zip(ls).map(|(r, cluster)| ClusterAssignment {
                    id: r.id.clone(),
                    category: cat,
                    cluster,
                }));
            }
            write_jsonl(&self.artifact(ASSIGNMENTS), out.iter()).map_err(|e| PipelineError::stage("cluster", e))?;
            Ok(out)
        })
    }

    pub fn summarize(&self, corpus: &Corpus, assignments: &[ClusterAssignment]) -> Result<Vec<SummaryRecord>, PipelineError> {
        self.timed("summarize", || {
            self.prepare_out_dir("summarize")?;
            let settings = SummarizerSettings {
                model: self.cfg.provider.chat_model.clone(),
                ..SummarizerSettings::default()
            };
            let summarizer = Summarizer::new(&self.gateway, self.cfg.summarize.clone(), settings)
                .map_err(|e| PipelineError::stage("summarize", e))?;
            let jobs: Vec<(Category, usize, Vec<String>)> = group_members(corpus, assignments)
                .into_iter()
                .map(|((cat, c), rs)| (cat, c, rs.iter().map(|r| r.text.clone()).collect()))
                .collect();
            let out = jobs
                .par_iter()
                .map(|(cat, c, texts)| {
                    summarizer
                        .summarize_cluster(*c, texts)
                        .map(|s| SummaryRecord {
                            category: *cat,
                            cluster: s.cluster,
                            summary: s.summary,
                            depth: s.depth,
                            n_llm_calls: s.n_llm_calls,
                        })
                        .map_err(|e| match e {
                            SummarizeError::Gateway(g) => PipelineError::from_gateway("summarize", g),
                            e => PipelineError::stage("summarize", e),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            write_jsonl(&self.artifact(SUMMARIES), out.iter()).map_err(|e| PipelineError::stage("summarize", e))?;
            Ok(out)
        })
    }

    pub fn rank(
        &self,
        corpus: &Corpus,
        assignments: &[ClusterAssignment],
        summaries: &[SummaryRecord],
    ) -> Result<Ranked, PipelineError> {
        self.timed("rank", || {
            self.prepare_out_dir("rank")?;
            let ranked = rank_all(corpus, assignments, summaries, &self.cfg)?;
            write_json(&self.artifact(RANKED), &ranked).map_err(|e| PipelineError::stage("rank", e))?;
            Ok(ranked)
        })
    }

    pub fn report(
        &self,
        corpus: &Corpus,
        classified: &[ClassifiedRecord],
        assignments: &[ClusterAssignment],
        ranked: &Ranked,
    ) -> Result<Report, PipelineError> {
        self.timed("report", || {
            self.prepare_out_dir("report")?;
            let report = build_report(corpus, classified, assignments, ranked);
            emit_report(&report, self.out_dir(), &[ReportFormat::Json, ReportFormat::Markdown])
                .map_err(|e| PipelineError::stage("report", e))?;
            Ok(report)
        })
    }

    /// Runs every stage and writes `run_record.json`.
    pub fn run(&self) -> Result<PipelineRunRecord, PipelineError> {
        let ingest = self.ingest()?;
        let corpus = &ingest.corpus;
        let classification = self.classify(corpus)?;
        let classified: Vec<ClassifiedRecord> = classification.results.iter().map(ClassifiedRecord::from).collect();
        let assignments = self.cluster(corpus, &classified)?;
        let summaries = self.summarize(corpus, &assignments)?;
        let ranked = self.rank(corpus, &assignments, &summaries)?;
        self.report(corpus, &classified, &assignments, &ranked)?;

        check_conservation(corpus, &classified, &assignments).map_err(|e| PipelineError::stage("run", e))?;
        let record = self.record(&ingest, &classification, &classified, &assignments, &summaries);
        write_json(&self.artifact(RUN_RECORD), &record).map_err(|e| PipelineError::stage("run", e))?;
        Ok(record)
    }

    fn record(
        &self,
        ingest: &IngestOutput,
        classification: &Classification,
        classified: &[ClassifiedRecord],
        assignments: &[ClusterAssignment],
        summaries: &[SummaryRecord],
    ) -> PipelineRunRecord {
        let has = |cat| classified.iter().filter(|c| c.has(cat)).count();
        let stats = self.gateway.stats();
        let categories = Category::ALL
            .iter()
            .map(|&cat| {
                let labels: Vec<ClusterLabel> = assignments.iter().filter(|a| a.category == cat).map(|a| a.cluster).collect();
                CategoryCounts {
                    category: Some(cat),
                    reviews: labels.len(),
                    clusters: crate::cluster::cluster_sizes(&labels).len(),
                    noise: labels.iter().filter(|l| l.is_noise()).count(),
                }
            })
            .collect();
        PipelineRunRecord {
            version: VERSION.to_string(),
            timings: self.timings.lock().unwrap().clone(),
            counts: RunCounts {
                reviews_in: ingest.corpus.len(),
                malformed_rows: ingest.malformed_rows,
                classified: classified.len(),
                unclassified: classification.failures.len(),
                parse_fallbacks: classification.results.iter().filter(|c| c.parse_fallback).count(),
                feature_request: has(Category::FeatureRequest),
                problem_report: has(Category::ProblemReport),
                both: classified
                    .iter()
                    .filter(|c| c.has(Category::FeatureRequest) && c.has(Category::ProblemReport))
                    .count(),
                irrelevant: classified.iter().filter(|c| c.labels.is_irrelevant()).count(),
                categories,
                llm_provider_calls: stats.provider_calls,
                llm_cache_hits: stats.cache_hits,
                summary_calls: summaries.iter().map(|s| s.n_llm_calls).sum(),
            },
            config: self.cfg.clone(),
        }
    }
}

/// Members of every non-noise cluster, keyed by (category, cluster id), in
/// corpus order.
pub fn group_members<'c>(
    corpus: &'c Corpus,
    assignments: &[ClusterAssignment],
) -> BTreeMap<(Category, usize), Vec<&'c Review>> {
    let mut groups: BTreeMap<(Category, usize), Vec<&Review>> = BTreeMap::new();
    for a in assignments {
        if let (Some(c), Some(r)) = (a.cluster.id(), corpus.get(&a.id)) {
            groups.entry((a.category, c)).or_default().push(r);
        }
    }
    groups
}

pub fn rank_all(
    corpus: &Corpus,
    assignments: &[ClusterAssignment],
    summaries: &[SummaryRecord],
    cfg: &PipelineConfig,
) -> Result<Ranked, PipelineError> {
    let groups = group_members(corpus, assignments);
    let mut by_cat: BTreeMap<Category, Vec<(ClusterStats, crate::summarize::ClusterSummary)>> = BTreeMap::new();
    for s in summaries {
        let members = groups.get(&(s.category, s.cluster)).ok_or_else(|| {
            PipelineError::stage("rank", format!("summary for unknown cluster {} {}", s.category, s.cluster))
        })?;
        let stats = ClusterStats::from_members(s.cluster, members).map_err(|e| PipelineError::stage("rank", e))?;
        by_cat.entry(s.category).or_default().push((stats, s.to_cluster_summary()));
    }
    if let Some(key) = groups.keys().find(|k| !summaries.iter().any(|s| (s.category, s.cluster) == **k)) {
        return Err(PipelineError::stage("rank", format!("cluster {} {} has no summary", key.0, key.1)));
    }
    let mut rank = |cat| {
        rank_clusters(by_cat.remove(&cat).unwrap_or_default(), &cfg.rank).map_err(|e| PipelineError::stage("rank", e))
    };
    Ok(Ranked {
        feature_request: rank(Category::FeatureRequest)?,
        problem_report: rank(Category::ProblemReport)?,
    })
}

/// Every classified review is either irrelevant or appears exactly once in
/// each of its categories' assignments; nothing else is assigned.
pub fn check_conservation(
    corpus: &Corpus,
    classified: &[ClassifiedRecord],
    assignments: &[ClusterAssignment],
) -> Result<(), String> {
    let mut seen: HashMap<(&str, Category), usize> = HashMap::new();
    for a in assignments {
        *seen.entry((a.id.as_str(), a.category)).or_default() += 1;
    }
    let mut expected = 0;
    for c in classified {
        if corpus.get(&c.id).is_none() {
            return Err(format!("classified review {} is not in the corpus", c.id));
        }
        for cat in Category::ALL {
            let n = seen.get(&(c.id.as_str(), cat)).copied().unwrap_or(0);
            let want = usize::from(c.has(cat));
            if n != want {
                return Err(format!("review {} appears {n} times in {cat}, expected {want}", c.id));
            }
            expected += want;
        }
    }
    if expected != assignments.len() {
        return Err(format!("{} assignments for {expected} expected slots", assignments.len()));
    }
    Ok(())
}
