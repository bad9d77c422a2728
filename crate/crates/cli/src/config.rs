//! Application configuration: TOML file, environment overrides, and
//! gateway construction. Invalid configuration is rejected up front,
//! before any index or gateway work starts.

use crate::error::CliError;
use lirag_core::gateway::http::{
    HttpDetector, HttpEncoder, HttpGatewayConfig, HttpGenerator, HttpJudge, RetryPolicy,
};
use lirag_core::gateway::mock::{
    EchoGenerator, FixtureDetector, HashEncoder, PlantedEncoder, PlantedFixture, StringMatchJudge,
};
use lirag_core::gateway::{DetectedBlock, Gateways};
use lirag_core::retrieval::PipelineConfig;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    /// Default index path; subcommands may override with `--index`.
    #[serde(default)]
    pub index_path: Option<PathBuf>,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    #[serde(default)]
    pub retrieval: lirag_core::RetrievalConfig,
    #[serde(default)]
    pub rerank: lirag_core::RerankConfig,
    #[serde(default)]
    pub gateways: GatewaySet,
    /// Connection defaults shared by every `kind = "http"` gateway.
    #[serde(default)]
    pub http: HttpDefaults,
}

fn default_log_level() -> String {
    "info".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySet {
    #[serde(default)]
    pub encoder: EncoderBackend,
    #[serde(default)]
    pub detector: DetectorBackend,
    #[serde(default)]
    pub generator: GeneratorBackend,
    #[serde(default)]
    pub judge: JudgeBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderBackend {
    /// Digest-seeded pseudo-random unit vectors; no setup required.
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_rows")]
        rows: usize,
    },
    /// One-hot vocabulary encoder backed by a JSON fixture file.
    Planted { fixture: PathBuf },
    /// Remote embedding server.
    Http { endpoint: String },
}

fn default_dim() -> usize {
    16
}

fn default_rows() -> usize {
    4
}

impl Default for EncoderBackend {
    fn default() -> Self {
        EncoderBackend::Hash {
            dim: default_dim(),
            rows: default_rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorBackend {
    /// Every page detects as layout-free.
    #[default]
    None,
    /// Blocks served from a JSON fixture keyed by image_ref.
    Fixture { fixture: PathBuf },
    /// Remote layout detection server.
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorBackend {
    /// Answers with the evidence ids, in order.
    #[default]
    Echo,
    /// Remote answer generator.
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JudgeBackend {
    /// Normalized exact string match.
    #[default]
    StringMatch,
    /// Remote judge.
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpDefaults {
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub bearer_token: Option<String>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    8
}

impl Default for HttpDefaults {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
            bearer_token: None,
        }
    }
}

impl HttpDefaults {
    fn gateway_config(&self, endpoint: &str) -> HttpGatewayConfig {
        HttpGatewayConfig {
            endpoint: endpoint.to_string(),
            bearer_token: self.bearer_token.clone(),
            timeout_ms: self.timeout_ms,
            retry: self.retry.clone(),
            max_in_flight: self.max_in_flight,
            modalities: None,
        }
    }
}

impl AppConfig {
    /// Load the file (defaults when absent), apply environment overrides,
    /// and validate.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut config = match path {
            Some(path) => {
                let raw = std::fs::read_to_string(path).map_err(|e| {
                    CliError::config(format!("reading config {}: {e}", path.display()))
                })?;
                toml::from_str(&raw).map_err(|e| {
                    CliError::config(format!("parsing config {}: {e}", path.display()))
                })?
            }
            None => AppConfig::default(),
        };
        config.apply_env(|name| std::env::var(name).ok())?;
        config.validate()?;
        Ok(config)
    }

    /// Environment overrides: `LIRAG_INDEX_PATH`, `LIRAG_LOG_LEVEL`, the
    /// per-role `LIRAG_{ENCODER,DETECTOR,GENERATOR,JUDGE}_ENDPOINT`
    /// variables (setting one switches that role to its HTTP backend),
    /// and the `LIRAG_HTTP_*` retry/transport knobs.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        if let Some(v) = get("LIRAG_INDEX_PATH") {
            self.index_path = Some(PathBuf::from(v));
        }
        if let Some(v) = get("LIRAG_LOG_LEVEL") {
            self.log_level = v;
        }
        if let Some(v) = get("LIRAG_ENCODER_ENDPOINT") {
            self.gateways.encoder = EncoderBackend::Http { endpoint: v };
        }
        if let Some(v) = get("LIRAG_DETECTOR_ENDPOINT") {
            self.gateways.detector = DetectorBackend::Http { endpoint: v };
        }
        if let Some(v) = get("LIRAG_GENERATOR_ENDPOINT") {
            self.gateways.generator = GeneratorBackend::Http { endpoint: v };
        }
        if let Some(v) = get("LIRAG_JUDGE_ENDPOINT") {
            self.gateways.judge = JudgeBackend::Http { endpoint: v };
        }
        if let Some(v) = get("LIRAG_HTTP_BEARER_TOKEN") {
            self.http.bearer_token = Some(v);
        }
        let mut parse_u64 =
            |name: &str, apply: &mut dyn FnMut(&mut Self, u64)| -> Result<(), CliError> {
                if let Some(v) = get(name) {
                    let parsed: u64 = v.parse().map_err(|_| {
                        CliError::config(format!("{name} must be an integer, got {v:?}"))
                    })?;
                    apply(self, parsed);
                }
                Ok(())
            };
        parse_u64("LIRAG_HTTP_RETRY_MAX_ATTEMPTS", &mut |c, v| {
            c.http.retry.max_attempts = v as u32
        })?;
        parse_u64("LIRAG_HTTP_RETRY_INITIAL_BACKOFF_MS", &mut |c, v| {
            c.http.retry.initial_backoff_ms = v
        })?;
        parse_u64("LIRAG_HTTP_RETRY_MAX_BACKOFF_MS", &mut |c, v| {
            c.http.retry.max_backoff_ms = v
        })?;
        parse_u64("LIRAG_HTTP_TIMEOUT_MS", &mut |c, v| c.http.timeout_ms = v)?;
        parse_u64("LIRAG_HTTP_MAX_IN_FLIGHT", &mut |c, v| {
            c.http.max_in_flight = v as usize
        })?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.retrieval
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        self.rerank
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        if self.http.retry.max_attempts == 0 {
            return Err(CliError::config(
                "http.retry.max_attempts must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            retrieval: self.retrieval,
            rerank: self.rerank,
        }
    }

    /// Instantiate the four gateway backends.
    pub fn build_gateways(&self) -> Result<Gateways, CliError> {
        let http_err = |e: lirag_core::gateway::GatewayError| CliError::gateway(e.to_string());
        let encoder: Box<dyn lirag_core::gateway::EncoderGateway> = match &self.gateways.encoder {
            EncoderBackend::Hash { dim, rows } => Box::new(HashEncoder::new(*dim, *rows)),
            EncoderBackend::Planted { fixture } => {
                let raw = std::fs::read_to_string(fixture).map_err(|e| {
                    CliError::config(format!(
                        "reading planted fixture {}: {e}",
                        fixture.display()
                    ))
                })?;
                let fixture: PlantedFixture = serde_json::from_str(&raw)
                    .map_err(|e| CliError::config(format!("parsing planted fixture: {e}")))?;
                Box::new(PlantedEncoder::new(fixture))
            }
            EncoderBackend::Http { endpoint } => {
                Box::new(HttpEncoder::new(self.http.gateway_config(endpoint)).map_err(http_err)?)
            }
        };
        let detector: Box<dyn lirag_core::gateway::LayoutGateway> = match &self.gateways.detector {
            DetectorBackend::None => Box::new(FixtureDetector::new()),
            DetectorBackend::Fixture { fixture } => {
                let raw = std::fs::read_to_string(fixture).map_err(|e| {
                    CliError::config(format!("reading layout fixture {}: {e}", fixture.display()))
                })?;
                let pages: HashMap<String, Vec<DetectedBlock>> = serde_json::from_str(&raw)
                    .map_err(|e| CliError::config(format!("parsing layout fixture: {e}")))?;
                Box::new(
                    pages
                        .into_iter()
                        .fold(FixtureDetector::new(), |d, (image_ref, blocks)| {
                            d.with_page(&image_ref, blocks)
                        }),
                )
            }
            DetectorBackend::Http { endpoint } => {
                Box::new(HttpDetector::new(self.http.gateway_config(endpoint)).map_err(http_err)?)
            }
        };
        let generator: Box<dyn lirag_core::gateway::GeneratorGateway> =
            match &self.gateways.generator {
                GeneratorBackend::Echo => Box::new(EchoGenerator),
                GeneratorBackend::Http { endpoint } => Box::new(
                    HttpGenerator::new(self.http.gateway_config(endpoint)).map_err(http_err)?,
                ),
            };
        let judge: Box<dyn lirag_core::gateway::JudgeGateway> = match &self.gateways.judge {
            JudgeBackend::StringMatch => Box::new(StringMatchJudge),
            JudgeBackend::Http { endpoint } => {
                Box::new(HttpJudge::new(self.http.gateway_config(endpoint)).map_err(http_err)?)
            }
        };
        Ok(Gateways {
            encoder,
            detector,
            generator,
            judge,
        })
    }
}
