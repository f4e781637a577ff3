use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use reviewmine_core::cluster::{Category, ClusterAssignment};
use reviewmine_core::pipeline::{
    build_report, emit_report, evaluate_command, load_config, load_corpus, rank_all, read_json, read_jsonl,
    write_json, ChatBackend, ClassifiedRecord, ConfigError, EmbeddingBackend, EvalMode, Pipeline, PipelineConfig,
    PipelineError, Ranked, ReportFormat, SummaryRecord, ASSIGNMENTS, CLASSIFIED, RANKED, REPORT_JSON, REPORT_MD,
    SUMMARIES,
};

#[derive(Parser)]
#[command(name = "reviewmine", version, about = "Classify, cluster, summarize and rank app reviews")]
struct Cli {
    /// TOML configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Review file (jsonl or csv); overrides `input.path`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `mock` answers chat requests from the configured script and embeds offline.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderChoice>,
    /// Same as `--provider mock`.
    #[arg(long, global = true, conflicts_with = "provider")]
    offline: bool,
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderChoice {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Markdown,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    FeatureRequest,
    ProblemReport,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Classification,
    Clustering,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the input file into corpus.jsonl.
    Ingest,
    /// Label every review as feature request, problem report or irrelevant.
    Classify,
    /// Embed, reduce and cluster each category.
    Cluster,
    /// Summarize every cluster.
    Summarize,
    /// Score and order the clusters of each category.
    Rank,
    /// Write report.json and report.md from the ranked clusters.
    Report {
        #[arg(long, value_enum, default_value = "both")]
        format: FormatArg,
    },
    /// Run every stage.
    Run,
    /// Score predictions against a ground-truth file.
    Evaluate {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Restrict clustering predictions to one category.
        #[arg(long, value_enum)]
        category: Option<CategoryArg>,
        /// Where to write the metric report; printed to stdout either way.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &cli.input {
        cfg.input.path = Some(p.clone());
    }
    if let Some(p) = &cli.cache_dir {
        cfg.output.cache_dir = p.clone();
    }
    if let Some(p) = &cli.out_dir {
        cfg.output.out_dir = p.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.mock_script {
        cfg.provider.mock_script = Some(p.clone());
    }
    let choice = if cli.offline { Some(ProviderChoice::Mock) } else { cli.provider };
    match choice {
        Some(ProviderChoice::Mock) => {
            cfg.provider.chat = ChatBackend::Mock;
            cfg.provider.embedding = EmbeddingBackend::Offline;
        }
        Some(ProviderChoice::Remote) => {
            cfg.provider.chat = ChatBackend::Remote;
            cfg.provider.embedding = EmbeddingBackend::Remote;
        }
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn artifact<T: serde::de::DeserializeOwned>(
    out: &Path,
    name: &str,
    stage: &'static str,
    producer: &str,
) -> Result<Vec<T>, PipelineError> {
    read_jsonl(&out.join(name)).map_err(|e| PipelineError::Stage {
        stage,
        message: format!("cannot read {name} ({e}); run `reviewmine {producer}` first"),
    })
}

fn corpus(out: &Path, stage: &'static str) -> Result<reviewmine_core::review::Corpus, PipelineError> {
    load_corpus(out).map_err(|e| PipelineError::Stage {
        stage,
        message: format!("cannot read corpus ({e}); run `reviewmine ingest` first"),
    })
}

fn stage_err(stage: &'static str) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::Evaluate {
        mode,
        predictions,
        truth,
        category,
        output,
    } = &cli.command
    {
        let cfg = build_config(cli)?;
        let mode = match mode {
            ModeArg::Classification => EvalMode::Classification,
            ModeArg::Clustering => EvalMode::Clustering,
        };
        let category = category.map(|c| match c {
            CategoryArg::FeatureRequest => Category::FeatureRequest,
            CategoryArg::ProblemReport => Category::ProblemReport,
        });
        let report = evaluate_command(predictions, truth, mode, &cfg.evaluate, category, output.as_deref())?;
        println!("{}", serde_json::to_string_pretty(&report).expect("metric report serializes"));
        return Ok(());
    }

    let cfg = build_config(cli)?;
    let out = cfg.output.out_dir.clone();
    match &cli.command {
        Command::Rank => {
            let corpus = corpus(&out, "rank")?;
            let assignments: Vec<ClusterAssignment> = artifact(&out, ASSIGNMENTS, "rank", "cluster")?;
            let summaries: Vec<SummaryRecord> = artifact(&out, SUMMARIES, "rank", "summarize")?;
            let ranked = rank_all(&corpus, &assignments, &summaries, &cfg)?;
            write_json(&out.join(RANKED), &ranked).map_err(stage_err("rank"))?;
        }
        Command::Report { format } => {
            let corpus = corpus(&out, "report")?;
            let classified: Vec<ClassifiedRecord> = artifact(&out, CLASSIFIED, "report", "classify")?;
            let assignments: Vec<ClusterAssignment> = artifact(&out, ASSIGNMENTS, "report", "cluster")?;
            let ranked: Ranked = read_json(&out.join(RANKED)).map_err(|e| PipelineError::Stage {
                stage: "report",
                message: format!("cannot read {RANKED} ({e}); run `reviewmine rank` first"),
            })?;
            let formats: &[ReportFormat] = match format {
                FormatArg::Json => &[ReportFormat::Json],
                FormatArg::Markdown => &[ReportFormat::Markdown],
                FormatArg::Both => &[ReportFormat::Json, ReportFormat::Markdown],
            };
            let report = build_report(&corpus, &classified, &assignments, &ranked);
            emit_report(&report, &out, formats).map_err(stage_err("report"))?;
        }
        Command::Ingest => {
            cfg.check_paths()?;
            let o = Pipeline::from_config(cfg)?.ingest()?;
            println!("{} reviews ingested, {} rows skipped", o.corpus.len(), o.malformed_rows);
        }
        Command::Classify => {
            let corpus = corpus(&out, "classify")?;
            let c = Pipeline::from_config(cfg)?.classify(&corpus)?;
            println!("{} reviews classified, {} failed", c.results.len(), c.failures.len());
        }
        Command::Cluster => {
            let corpus = corpus(&out, "cluster")?;
            let classified: Vec<ClassifiedRecord> = artifact(&out, CLASSIFIED, "cluster", "classify")?;
            Pipeline::from_config(cfg)?.cluster(&corpus, &classified)?;
        }
        Command::Summarize => {
            let corpus = corpus(&out, "summarize")?;
            let assignments: Vec<ClusterAssignment> = artifact(&out, ASSIGNMENTS, "summarize", "cluster")?;
            Pipeline::from_config(cfg)?.summarize(&corpus, &assignments)?;
        }
        Command::Run => {
            cfg.check_paths()?;
            let record = Pipeline::from_config(cfg)?.run()?;
            let c = &record.counts;
            println!(
                "{} reviews: {} feature requests, {} problem reports, {} irrelevant, {} unclassified",
                c.reviews_in, c.feature_request, c.problem_report, c.irrelevant, c.unclassified
            );
            println!("{}", out.join(REPORT_MD).display());
            println!("{}", out.join(REPORT_JSON).display());
        }
        Command::Evaluate { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
