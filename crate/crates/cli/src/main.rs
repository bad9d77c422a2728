//! `lirag`: operator CLI for the late-interaction retrieval engine.
//!
//! Verbs: `ingest` a corpus manifest into a binary index, `query` it end
//! to end, `eval-retrieval` / `eval-qa` for benchmark runs, `bench` for
//! latency profiles, and `serve` for the HTTP query service.
//!
//! Exit codes: 0 success, 2 configuration, 3 gateway dependency, 4 io/data.

mod commands;
mod config;
mod error;
mod response;
mod service;

/// Request id for one-off queries; shared by the CLI and the service so
/// identical queries produce identical bodies on both surfaces.
pub(crate) const ADHOC_QUERY_ID: &str = "adhoc";

use clap::{ArgGroup, Parser, Subcommand};
use commands::{EvalKind, QueryFlags};
use config::AppConfig;
use error::CliError;
use lirag_core::eval::EvalMode;
use lirag_core::gateway::QueryRef;
use lirag_core::rerank::ThetaMode;
use std::net::SocketAddr;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "lirag",
    version,
    about = "Late-interaction multimodal retrieval engine and RAG pipeline"
)]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a corpus manifest and write the binary index.
    Ingest {
        /// Corpus manifest (JSONL, one page per line).
        #[arg(long)]
        manifest: PathBuf,
        /// Output index path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one query through retrieve -> rerank -> generate.
    #[command(group(ArgGroup::new("query_input").required(true).args(["text", "audio"])))]
    Query {
        #[arg(long)]
        index: Option<PathBuf>,
        /// Textual query.
        #[arg(long)]
        text: Option<String>,
        /// Spoken query (path or URI of the audio payload).
        #[arg(long)]
        audio: Option<String>,
        /// Candidate pages to retrieve (overrides config).
        #[arg(long)]
        k: Option<usize>,
        /// Block threshold (overrides config).
        #[arg(long)]
        theta: Option<f64>,
        /// Threshold interpretation: absolute or relative.
        #[arg(long, value_parser = parse_theta_mode)]
        theta_mode: Option<ThetaMode>,
        /// Emit machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Score retrieval quality (mean nDCG@k) over a query set.
    EvalRetrieval {
        #[arg(long)]
        index: Option<PathBuf>,
        /// Query set (JSONL, one query per line).
        #[arg(long)]
        queries: PathBuf,
        /// Directory for the JSON/table/CSV report artifacts.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score end-to-end answer accuracy under an evidence mode.
    EvalQa {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        /// Evidence mode: top_k, top_k_reranked, or gold_page.
        #[arg(long, value_parser = clap::builder::ValueParser::new(|s: &str| s.parse::<EvalMode>()))]
        mode: EvalMode,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Profile per-stage latency (mean/p50/p95).
    Bench {
        #[arg(long)]
        index: Option<PathBuf>,
        /// Query set to drive live pipeline runs.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Pipeline executions (round-robin over the query set).
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Summarize pre-recorded stage timings (JSON array) instead of
        /// running the pipeline.
        #[arg(long)]
        from_timings: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve POST /query, GET /healthz, and GET /metrics over HTTP.
    Serve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn parse_theta_mode(s: &str) -> Result<ThetaMode, String> {
    match s {
        "absolute" => Ok(ThetaMode::Absolute),
        "relative" => Ok(ThetaMode::Relative),
        other => Err(format!(
            "unknown theta mode {other:?} (expected absolute or relative)"
        )),
    }
}

fn main() {
    let cli = Cli::parse();
    let config = match AppConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => fail(e),
    };
    env_logger::Builder::new()
        .parse_filters(&config.log_level)
        .format_timestamp_millis()
        .init();

    let result = match cli.command {
        Command::Ingest { manifest, out } => commands::cmd_ingest(&config, &manifest, &out),
        Command::Query {
            index,
            text,
            audio,
            k,
            theta,
            theta_mode,
            json,
        } => {
            let query_ref = match (audio, text) {
                (Some(audio), _) => QueryRef::AudioRef(audio),
                (None, Some(text)) => QueryRef::Text(text),
                (None, None) => unreachable!("clap group enforces one input"),
            };
            commands::cmd_query(
                &config,
                index.as_deref(),
                query_ref,
                QueryFlags {
                    k,
                    theta,
                    theta_mode,
                    json,
                },
            )
        }
        Command::EvalRetrieval {
            index,
            queries,
            out_dir,
            k,
        } => commands::cmd_eval(
            &config,
            index.as_deref(),
            &queries,
            EvalKind::Retrieval,
            out_dir.as_deref(),
            k,
        ),
        Command::EvalQa {
            index,
            queries,
            mode,
            out_dir,
            k,
        } => commands::cmd_eval(
            &config,
            index.as_deref(),
            &queries,
            EvalKind::Qa(mode),
            out_dir.as_deref(),
            k,
        ),
        Command::Bench {
            index,
            queries,
            runs,
            from_timings,
            json,
        } => commands::cmd_bench(
            &config,
            index.as_deref(),
            queries.as_deref(),
            runs,
            from_timings.as_deref(),
            json,
        ),
        Command::Serve { index, addr } => service::cmd_serve(&config, index.as_deref(), addr),
    };
    if let Err(e) = result {
        fail(e);
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("error: {e}");
    std::process::exit(e.code);
}
