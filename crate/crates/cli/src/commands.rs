//! CLI subcommand implementations, minus `serve` (see `service`).

use crate::config::AppConfig;
use crate::error::CliError;
use crate::response::{render_text, QueryResponseBody};
use lirag_core::eval::{profile_latency, render_report_table, report_to_csv, EvalMode, EvalReport};
use lirag_core::gateway::QueryRef;
use lirag_core::index::{CorpusManifest, QuerySet};
use lirag_core::retrieval::{query_pipeline, PipelineConfig};
use lirag_core::timing::StageTimings;
use lirag_core::{evaluate_qa, evaluate_retrieval, KnowledgeBase};
use std::path::{Path, PathBuf};

pub struct QueryFlags {
    pub k: Option<usize>,
    pub theta: Option<f64>,
    pub theta_mode: Option<lirag_core::rerank::ThetaMode>,
    pub json: bool,
}

pub fn cmd_ingest(
    config: &AppConfig,
    manifest_path: &Path,
    out_path: &Path,
) -> Result<(), CliError> {
    let manifest = CorpusManifest::from_path(manifest_path)?;
    log::info!(
        "manifest {} declares {} page(s)",
        manifest_path.display(),
        manifest.entries.len()
    );
    let gateways = config.build_gateways()?;
    let opts = lirag_core::index::IngestOptions {
        encode_concurrency: config.http.max_in_flight,
    };
    let kb = lirag_core::ingest(
        &manifest,
        gateways.encoder.as_ref(),
        gateways.detector.as_ref(),
        &opts,
    )?;
    lirag_core::save(&kb, out_path)?;
    println!(
        "indexed {} page(s) (dim {}) -> {}",
        kb.len(),
        kb.dim(),
        out_path.display()
    );
    Ok(())
}

pub fn load_index(
    config: &AppConfig,
    index_flag: Option<&Path>,
) -> Result<KnowledgeBase, CliError> {
    let path = index_flag
        .map(PathBuf::from)
        .or_else(|| config.index_path.clone())
        .ok_or_else(|| {
            CliError::config("no index path: pass --index or set index_path in the config".into())
        })?;
    Ok(lirag_core::load(&path)?)
}

/// Apply per-invocation flag overrides on top of the configured pipeline.
pub fn effective_pipeline(
    config: &AppConfig,
    flags: &QueryFlags,
) -> Result<PipelineConfig, CliError> {
    let mut cfg = config.pipeline_config();
    if let Some(k) = flags.k {
        cfg.retrieval.k = k;
    }
    if let Some(theta) = flags.theta {
        cfg.rerank.theta = theta;
    }
    if let Some(mode) = flags.theta_mode {
        cfg.rerank.theta_mode = mode;
    }
    cfg.retrieval
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    cfg.rerank
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_query(
    config: &AppConfig,
    index_flag: Option<&Path>,
    query_ref: QueryRef,
    flags: QueryFlags,
) -> Result<(), CliError> {
    let kb = load_index(config, index_flag)?;
    let gateways = config.build_gateways()?;
    let cfg = effective_pipeline(config, &flags)?;
    match query_pipeline(&kb, crate::ADHOC_QUERY_ID, &query_ref, &cfg, &gateways) {
        Ok(out) => {
            let body = QueryResponseBody::from(out);
            if flags.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&body).expect("body serializes")
                );
            } else {
                print!("{}", render_text(&body));
            }
            Ok(())
        }
        Err(err) => {
            // Surface whatever retrieval produced before the failure.
            if !err.ranked.is_empty() && !flags.json {
                eprintln!(
                    "pipeline failed at stage {:?}; retrieval results before the failure:",
                    err.stage
                );
                for page in &err.ranked {
                    eprintln!(
                        "  {:>2}. {:<24} score {:.6}",
                        page.rank, page.page_id, page.score
                    );
                }
            }
            Err(CliError::from(&err))
        }
    }
}

pub enum EvalKind {
    Retrieval,
    Qa(EvalMode),
}

pub fn cmd_eval(
    config: &AppConfig,
    index_flag: Option<&Path>,
    queries_path: &Path,
    kind: EvalKind,
    out_dir: Option<&Path>,
    k: Option<usize>,
) -> Result<(), CliError> {
    let kb = load_index(config, index_flag)?;
    let queries = QuerySet::from_path(queries_path)?;
    let gateways = config.build_gateways()?;
    let mut cfg = config.pipeline_config();
    if let Some(k) = k {
        cfg.retrieval.k = k;
        cfg.retrieval
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let (report, stem) = match kind {
        EvalKind::Retrieval => (
            evaluate_retrieval(&kb, &queries, &cfg, &gateways),
            "eval-retrieval".to_string(),
        ),
        EvalKind::Qa(mode) => (
            evaluate_qa(&kb, &queries, &cfg, mode, &gateways),
            format!("eval-qa-{}", mode.as_str()),
        ),
    };
    print!("{}", render_report_table(&report));
    if let Some(dir) = out_dir {
        write_report_files(&report, dir, &stem)?;
    }
    Ok(())
}

fn write_report_files(report: &EvalReport, dir: &Path, stem: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
    let write = |name: String, contents: String| -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    };
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let table = render_report_table(report);
    let csv = report_to_csv(report).map_err(|e| CliError::io(e.to_string()))?;
    let paths = [
        write(format!("{stem}.json"), json)?,
        write(format!("{stem}.txt"), table)?,
        write(format!("{stem}.csv"), csv)?,
    ];
    for path in paths {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Latency benchmark: either replay recorded stage timings from a JSON
/// file, or run the pipeline `runs` times round-robin over the query set.
pub fn cmd_bench(
    config: &AppConfig,
    index_flag: Option<&Path>,
    queries_path: Option<&Path>,
    runs: usize,
    from_timings: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let timings: Vec<StageTimings> = match from_timings {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str(&raw)
                .map_err(|e| CliError::io(format!("parsing {}: {e}", path.display())))?
        }
        None => {
            let queries_path = queries_path.ok_or_else(|| {
                CliError::config("bench needs --queries (or --from-timings)".into())
            })?;
            let queries = QuerySet::from_path(queries_path)?;
            if queries.entries.is_empty() {
                return Err(CliError::config("bench needs a non-empty query set".into()));
            }
            let kb = load_index(config, index_flag)?;
            let gateways = config.build_gateways()?;
            let cfg = config.pipeline_config();
            let mut collected = Vec::with_capacity(runs);
            for run in 0..runs {
                let query = &queries.entries[run % queries.entries.len()];
                let out = query_pipeline(&kb, &query.query_id, &query.query_ref(), &cfg, &gateways)
                    .map_err(|e| CliError::from(&e))?;
                collected.push(out.timings);
            }
            collected
        }
    };
    let summary = profile_latency(&timings).map_err(|e| CliError::config(e.to_string()))?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
    } else {
        println!(
            "{:<16} {:>10} {:>10} {:>10}",
            "stage", "mean_ms", "p50_ms", "p95_ms"
        );
        println!("{}", "-".repeat(49));
        for (name, s) in summary.stages() {
            println!(
                "{:<16} {:>10.3} {:>10.3} {:>10.3}",
                name, s.mean_ms, s.p50_ms, s.p95_ms
            );
        }
        println!("runs: {}", summary.n_runs);
    }
    Ok(())
}
