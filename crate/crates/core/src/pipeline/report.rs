use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{write_json, ClassifiedRecord, Ranked, REPORT_JSON, REPORT_MD};
use super::group_members;
use crate::cluster::{Category, ClusterAssignment};
use crate::review::{Corpus, Review};

pub const MAX_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub rating: u8,
    pub thumbs_up: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCluster {
    pub rank: usize,
    pub cluster: usize,
    pub score: f64,
    pub n_reviews: usize,
    pub mean_rating: f64,
    pub total_thumbs: u64,
    pub summary: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub category: Category,
    pub n_reviews: usize,
    pub n_noise: usize,
    pub clusters: Vec<ReportCluster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub source: String,
    pub reviews: usize,
    pub classified: usize,
    pub irrelevant: usize,
    pub sections: Vec<ReportSection>,
}

/// Most-upvoted members first, ties by id.
fn samples(members: &[&Review]) -> Vec<Sample> {
    let mut sorted: Vec<&Review> = members.to_vec();
    sorted.sort_by(|a, b| b.thumbs_up.cmp(&a.thumbs_up).then_with(|| a.id.cmp(&b.id)));
    sorted
        .into_iter()
        .take(MAX_SAMPLES)
        .map(|r| Sample {
            id: r.id.clone(),
            text: r.text.clone(),
            rating: r.rating,
            thumbs_up: r.thumbs_up,
        })
        .collect()
}

pub fn build_report(
    corpus: &Corpus,
    classified: &[ClassifiedRecord],
    assignments: &[ClusterAssignment],
    ranked: &Ranked,
) -> Report {
    let groups = group_members(corpus, assignments);
    let mut per_cat: HashMap<Category, (usize, usize)> = HashMap::new();
    for a in assignments {
        let e = per_cat.entry(a.category).or_default();
        e.0 += 1;
        e.1 += usize::from(a.cluster.is_noise());
    }
    let sections = Category::ALL
        .iter()
        .map(|&cat| {
            let (n_reviews, n_noise) = per_cat.get(&cat).copied().unwrap_or_default();
            let clusters = ranked
                .get(cat)
                .iter()
                .map(|rc| ReportCluster {
                    rank: rc.rank,
                    cluster: rc.stats.cluster,
                    score: rc.score,
                    n_reviews: rc.stats.n_reviews,
                    mean_rating: rc.stats.mean_rating,
                    total_thumbs: rc.stats.total_thumbs,
                    summary: rc.summary.summary.clone(),
                    samples: groups
                        .get(&(cat, rc.stats.cluster))
                        .map(|m| samples(m))
                        .unwrap_or_default(),
                })
                .collect();
            ReportSection {
                category: cat,
                n_reviews,
                n_noise,
                clusters,
            }
        })
        .collect();
    let source = Path::new(&corpus.source)
        .file_name()
        .map_or_else(|| corpus.source.clone(), |f| f.to_string_lossy().into_owned());
    Report {
        source,
        reviews: corpus.len(),
        classified: classified.len(),
        irrelevant: classified.iter().filter(|c| c.labels.is_irrelevant()).count(),
        sections,
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_markdown(report: &Report) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Review clusters\n");
    let _ = writeln!(
        md,
        "Input `{}`: {} reviews, {} classified, {} irrelevant.",
        report.source, report.reviews, report.classified, report.irrelevant
    );
    for section in &report.sections {
        let _ = writeln!(md, "\n## {}\n", section.category.title());
        if section.clusters.is_empty() {
            let _ = writeln!(md, "{} reviews; no clusters found.", section.n_reviews);
            continue;
        }
        let _ = writeln!(
            md,
            "{} reviews in {} clusters, {} unclustered.",
            section.n_reviews,
            section.clusters.len(),
            section.n_noise
        );
        for c in &section.clusters {
            let _ = writeln!(md, "\n### {}. Cluster {}\n", c.rank, c.cluster);
            let _ = writeln!(md, "| Score | Reviews | Mean rating | Thumbs up |");
            let _ = writeln!(md, "|---:|---:|---:|---:|");
            let _ = writeln!(
                md,
                "| {:.2} | {} | {:.2} | {} |\n",
                c.score, c.n_reviews, c.mean_rating, c.total_thumbs
            );
            let _ = writeln!(md, "**Summary:** {}\n", one_line(&c.summary));
            let _ = writeln!(md, "Sample reviews:\n");
            for s in &c.samples {
                let _ = writeln!(
                    md,
                    "- {} (rating {}, {} thumbs up)",
                    one_line(&s.text),
                    s.rating,
                    s.thumbs_up
                );
            }
        }
    }
    md
}

pub fn emit_report(report: &Report, out_dir: &Path, formats: &[ReportFormat]) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for f in formats {
        match f {
            ReportFormat::Json => write_json(&out_dir.join(REPORT_JSON), report)?,
            ReportFormat::Markdown => std::fs::write(out_dir.join(REPORT_MD), render_markdown(report))?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(rank: usize, id: usize, score: f64) -> ReportCluster {
        ReportCluster {
            rank,
            cluster: id,
            score,
            n_reviews: 5,
            mean_rating: 2.0,
            total_thumbs: 3,
            summary: format!("Summary {id}."),
            samples: vec![Sample {
                id: "r".into(),
                text: "multi\nline".into(),
                rating: 2,
                thumbs_up: 1,
            }],
        }
    }

    fn report(f: Vec<ReportCluster>, b: Vec<ReportCluster>) -> Report {
        Report {
            source: "in.jsonl".into(),
            reviews: 20,
            classified: 20,
            irrelevant: 5,
            sections: vec![
                ReportSection { category: Category::FeatureRequest, n_reviews: 10, n_noise: 0, clusters: f },
                ReportSection { category: Category::ProblemReport, n_reviews: 3, n_noise: 3, clusters: b },
            ],
        }
    }

    #[test]
    fn markdown_orders_by_rank_and_marks_empty_sections() {
        let md = render_markdown(&report(vec![cluster(1, 4, 9.0), cluster(2, 0, 2.5)], vec![]));
        let first = md.find("### 1. Cluster 4").unwrap();
        let second = md.find("### 2. Cluster 0").unwrap();
        assert!(first < second);
        assert!(md.find("## Feature requests").unwrap() < md.find("## Problem reports").unwrap());
        assert!(md.contains("no clusters found"));
        assert!(md.contains("| 9.00 | 5 | 2.00 | 3 |"));
        assert!(md.contains("- multi line (rating 2, 1 thumbs up)"));
    }

    #[test]
    fn sample_selection() {
        let mk = |id: &str, thumbs| Review {
            id: id.into(),
            app: "a".into(),
            text: id.into(),
            rating: 3,
            thumbs_up: thumbs,
            posted_at: None,
            language: None,
        };
        let rs: Vec<Review> = vec![mk("a", 0), mk("b", 5), mk("c", 5), mk("d", 1), mk("e", 0), mk("f", 9)];
        let refs: Vec<&Review> = rs.iter().collect();
        let ids: Vec<String> = samples(&refs).into_iter().map(|s| s.id).collect();
        assert_eq!(ids, ["f", "b", "c", "d", "a"]);
    }
}
