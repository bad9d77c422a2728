//! Long-running HTTP query service.
//!
//! One immutable index is loaded at startup and shared across requests;
//! gateway clients bound their own in-flight counts. Pipeline work runs
//! on the blocking pool, so concurrent queries neither block the runtime
//! nor interleave results.

use crate::config::AppConfig;
use crate::error::CliError;
use crate::response::QueryResponseBody;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lirag_core::gateway::{Gateways, QueryRef};
use lirag_core::retrieval::{query_pipeline, PipelineConfig, StageFailure};
use lirag_core::timing::StageTimings;
use lirag_core::KnowledgeBase;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub struct ServiceState {
    kb: KnowledgeBase,
    gateways: Gateways,
    base: PipelineConfig,
    metrics: Metrics,
}

#[derive(Default)]
struct Metrics {
    queries: AtomicU64,
    failures: AtomicU64,
    encode_query_us: AtomicU64,
    retrieve_us: AtomicU64,
    rerank_us: AtomicU64,
    generate_us: AtomicU64,
    total_us: AtomicU64,
}

impl Metrics {
    fn record(&self, t: &StageTimings) {
        let add = |counter: &AtomicU64, ms: f64| {
            counter.fetch_add((ms * 1e3) as u64, Ordering::Relaxed);
        };
        self.queries.fetch_add(1, Ordering::Relaxed);
        add(&self.encode_query_us, t.encode_query_ms);
        add(&self.retrieve_us, t.retrieve_ms);
        add(&self.rerank_us, t.rerank_ms);
        add(&self.generate_us, t.generate_ms);
        add(&self.total_us, t.total_ms);
    }

    fn snapshot(&self) -> serde_json::Value {
        let queries = self.queries.load(Ordering::Relaxed);
        let stage = |counter: &AtomicU64| {
            let total_us = counter.load(Ordering::Relaxed);
            let mean_ms = if queries == 0 {
                0.0
            } else {
                total_us as f64 / 1e3 / queries as f64
            };
            json!({ "total_ms": total_us as f64 / 1e3, "mean_ms": mean_ms })
        };
        json!({
            "queries": queries,
            "failures": self.failures.load(Ordering::Relaxed),
            "stages": {
                "encode_query": stage(&self.encode_query_us),
                "retrieve": stage(&self.retrieve_us),
                "rerank": stage(&self.rerank_us),
                "generate": stage(&self.generate_us),
                "total": stage(&self.total_us),
            },
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryApiRequest {
    #[serde(default)]
    pub audio_ref: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub theta_mode: Option<lirag_core::rerank::ThetaMode>,
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

fn error_response(status: StatusCode, error: String, id: Option<String>) -> Response {
    (status, Json(ApiError { error, id })).into_response()
}

/// Run the service until ctrl-c. The index is loaded before binding, so a
/// missing or corrupt index fails startup instead of the first request.
pub fn cmd_serve(
    config: &AppConfig,
    index_flag: Option<&std::path::Path>,
    addr: SocketAddr,
) -> Result<(), CliError> {
    let kb = crate::commands::load_index(config, index_flag)?;
    let gateways = config.build_gateways()?;
    let state = Arc::new(ServiceState {
        kb,
        gateways,
        base: config.pipeline_config(),
        metrics: Metrics::default(),
    });
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io(format!("starting runtime: {e}")))?;
    runtime.block_on(async move {
        let app = router(state.clone());
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::io(format!("binding {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::io(e.to_string()))?;
        log::info!("serving {} page(s) on http://{local}", state.kb.len());
        println!("listening on http://{local}");
        use std::io::Write;
        std::io::stdout().flush().ok();
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::io(e.to_string()))
    })
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/query", post(handle_query))
        .route("/healthz", get(handle_healthz))
        .route("/metrics", get(handle_metrics))
        .with_state(state)
}

async fn handle_healthz(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "index_pages": state.kb.len() }))
}

async fn handle_metrics(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(state.metrics.snapshot())
}

async fn handle_query(
    State(state): State<Arc<ServiceState>>,
    Json(req): Json<QueryApiRequest>,
) -> Response {
    let query_ref = match (&req.audio_ref, &req.text) {
        (Some(audio), _) => QueryRef::AudioRef(audio.clone()),
        (None, Some(text)) => QueryRef::Text(text.clone()),
        (None, None) => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "request needs audio_ref or text".into(),
                None,
            )
        }
    };
    let mut cfg = state.base.clone();
    if let Some(k) = req.k {
        cfg.retrieval.k = k;
    }
    if let Some(theta) = req.theta {
        cfg.rerank.theta = theta;
    }
    if let Some(mode) = req.theta_mode {
        cfg.rerank.theta_mode = mode;
    }
    if let Err(e) = cfg.retrieval.validate() {
        return error_response(StatusCode::BAD_REQUEST, e.to_string(), None);
    }
    if let Err(e) = cfg.rerank.validate() {
        return error_response(StatusCode::BAD_REQUEST, e.to_string(), None);
    }

    let pipeline_state = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        query_pipeline(
            &pipeline_state.kb,
            crate::ADHOC_QUERY_ID,
            &query_ref,
            &cfg,
            &pipeline_state.gateways,
        )
    })
    .await;

    match outcome {
        Ok(Ok(out)) => {
            state.metrics.record(&out.timings);
            Json(QueryResponseBody::from(out)).into_response()
        }
        Ok(Err(err)) => {
            state.metrics.failures.fetch_add(1, Ordering::Relaxed);
            match err.source {
                StageFailure::Gateway(ref g) => error_response(
                    StatusCode::SERVICE_UNAVAILABLE,
                    format!("stage {} gateway dependency failed: {g}", err.stage),
                    None,
                ),
                _ => internal_error(format!("stage {}: {}", err.stage, err.source)),
            }
        }
        Err(join_err) => {
            state.metrics.failures.fetch_add(1, Ordering::Relaxed);
            internal_error(format!("pipeline task: {join_err}"))
        }
    }
}

fn internal_error(detail: String) -> Response {
    static SEQ: AtomicU64 = AtomicU64::new(0);
    let id = format!("err-{}", SEQ.fetch_add(1, Ordering::Relaxed));
    log::error!("{id}: {detail}");
    error_response(
        StatusCode::INTERNAL_SERVER_ERROR,
        "internal error".into(),
        Some(id),
    )
}
