//! JSON-over-HTTP gateway clients.
//!
//! Each role posts its request struct to one configured endpoint and
//! expects the matching response struct back. Connection failures,
//! timeouts, and 5xx/429 statuses are retried with exponential backoff up
//! to the configured budget; any other failure is final. Response bytes go
//! through the same parse-then-validate path as the mocks
//! ([`parse_encode_response`] and friends), so adversarial payloads always
//! land in [`GatewayError::Protocol`].

use super::*;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Retry budget for transport failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first (must be >= 1).
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 100,
            max_backoff_ms: 2_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before attempt `attempt + 1`, doubling per retry.
    pub fn backoff_for(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

/// Connection settings for one gateway role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpGatewayConfig {
    pub endpoint: String,
    #[serde(default)]
    pub bearer_token: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Cap on concurrent requests through this client.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Modalities the backend accepts; `None` means all.
    #[serde(default)]
    pub modalities: Option<Vec<Modality>>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    8
}

impl HttpGatewayConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            bearer_token: None,
            timeout_ms: default_timeout_ms(),
            retry: RetryPolicy::default(),
            max_in_flight: default_max_in_flight(),
            modalities: None,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(max: usize) -> Self {
        Self {
            slots: Mutex::new(max.max(1)),
            freed: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut slots = self.slots.lock().expect("in-flight lock poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("in-flight lock poisoned");
        }
        *slots -= 1;
        drop(slots);
        let out = f();
        *self.slots.lock().expect("in-flight lock poisoned") += 1;
        self.freed.notify_one();
        out
    }
}

/// Shared POST-with-retry machinery behind the four role clients.
pub struct HttpTransport {
    role: Role,
    cfg: HttpGatewayConfig,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl HttpTransport {
    pub fn new(role: Role, cfg: HttpGatewayConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Transport {
                role,
                attempts: 0,
                detail: e.to_string(),
            })?;
        let in_flight = InFlight::new(cfg.max_in_flight);
        Ok(Self {
            role,
            cfg,
            client,
            in_flight,
        })
    }

    fn post_json<B: Serialize>(&self, body: &B) -> Result<Vec<u8>, GatewayError> {
        self.in_flight.run(|| self.post_json_inner(body))
    }

    fn post_json_inner<B: Serialize>(&self, body: &B) -> Result<Vec<u8>, GatewayError> {
        let max = self.cfg.retry.max_attempts.max(1);
        let mut last_detail = String::new();
        for attempt in 0..max {
            if attempt > 0 {
                std::thread::sleep(self.cfg.retry.backoff_for(attempt - 1));
            }
            let mut req = self.client.post(&self.cfg.endpoint).json(body);
            if let Some(token) = &self.cfg.bearer_token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.bytes().map(|b| b.to_vec()).map_err(|e| {
                            GatewayError::Transport {
                                role: self.role,
                                attempts: attempt + 1,
                                detail: format!("reading response body: {e}"),
                            }
                        });
                    }
                    let retriable = status.is_server_error() || status.as_u16() == 429;
                    if !retriable {
                        return Err(GatewayError::Protocol {
                            role: self.role,
                            detail: format!("backend rejected request with status {status}"),
                        });
                    }
                    last_detail = format!("status {status}");
                }
                Err(e) => last_detail = e.to_string(),
            }
            log::warn!(
                "{} attempt {}/{} failed: {}",
                self.role,
                attempt + 1,
                max,
                last_detail
            );
        }
        Err(GatewayError::Transport {
            role: self.role,
            attempts: max,
            detail: last_detail,
        })
    }
}

/// Parse and schema-validate encoder response bytes.
pub fn parse_encode_response(
    bytes: &[u8],
    req: &EncodeRequest,
) -> Result<EncodeResponse, GatewayError> {
    let resp: EncodeResponse =
        serde_json::from_slice(bytes).map_err(|e| GatewayError::Protocol {
            role: Role::Encode,
            detail: e.to_string(),
        })?;
    resp.validate(req)?;
    Ok(resp)
}

/// Parse and schema-validate detector response bytes.
pub fn parse_detect_response(
    bytes: &[u8],
    req: &DetectRequest,
) -> Result<DetectResponse, GatewayError> {
    let resp: DetectResponse =
        serde_json::from_slice(bytes).map_err(|e| GatewayError::Protocol {
            role: Role::Detect,
            detail: e.to_string(),
        })?;
    resp.validate(req)?;
    Ok(resp)
}

/// Parse and schema-validate generator response bytes.
pub fn parse_generate_response(
    bytes: &[u8],
    req: &GenerateRequest,
) -> Result<GenerateResponse, GatewayError> {
    let resp: GenerateResponse =
        serde_json::from_slice(bytes).map_err(|e| GatewayError::Protocol {
            role: Role::Generate,
            detail: e.to_string(),
        })?;
    resp.validate(req)?;
    Ok(resp)
}

/// Parse and schema-validate judge response bytes.
pub fn parse_judge_response(
    bytes: &[u8],
    req: &JudgeRequest,
) -> Result<JudgeResponse, GatewayError> {
    let resp: JudgeResponse =
        serde_json::from_slice(bytes).map_err(|e| GatewayError::Protocol {
            role: Role::Judge,
            detail: e.to_string(),
        })?;
    resp.validate(req)?;
    Ok(resp)
}

pub struct HttpEncoder(HttpTransport);

impl HttpEncoder {
    pub fn new(cfg: HttpGatewayConfig) -> Result<Self, GatewayError> {
        Ok(Self(HttpTransport::new(Role::Encode, cfg)?))
    }
}

impl EncoderGateway for HttpEncoder {
    fn encode(&self, req: &EncodeRequest) -> Result<EncodeResponse, GatewayError> {
        if let Some(supported) = &self.0.cfg.modalities {
            if !supported.contains(&req.modality) {
                return Err(GatewayError::UnsupportedModality {
                    role: Role::Encode,
                    modality: req.modality,
                });
            }
        }
        let bytes = self.0.post_json(req)?;
        parse_encode_response(&bytes, req)
    }
}

pub struct HttpDetector(HttpTransport);

impl HttpDetector {
    pub fn new(cfg: HttpGatewayConfig) -> Result<Self, GatewayError> {
        Ok(Self(HttpTransport::new(Role::Detect, cfg)?))
    }
}

impl LayoutGateway for HttpDetector {
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, GatewayError> {
        let bytes = self.0.post_json(req)?;
        parse_detect_response(&bytes, req)
    }
}

pub struct HttpGenerator(HttpTransport);

impl HttpGenerator {
    pub fn new(cfg: HttpGatewayConfig) -> Result<Self, GatewayError> {
        Ok(Self(HttpTransport::new(Role::Generate, cfg)?))
    }
}

impl GeneratorGateway for HttpGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GatewayError> {
        if req.evidence.is_empty() {
            return Err(GatewayError::EmptyEvidence);
        }
        let bytes = self.0.post_json(req)?;
        parse_generate_response(&bytes, req)
    }
}

pub struct HttpJudge(HttpTransport);

impl HttpJudge {
    pub fn new(cfg: HttpGatewayConfig) -> Result<Self, GatewayError> {
        Ok(Self(HttpTransport::new(Role::Judge, cfg)?))
    }
}

impl JudgeGateway for HttpJudge {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeResponse, GatewayError> {
        let bytes = self.0.post_json(req)?;
        parse_judge_response(&bytes, req)
    }
}
