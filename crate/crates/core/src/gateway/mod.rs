//! Pluggable boundaries to the external models: the embedding encoder, the
//! layout detector, the answer generator, and the answer judge.
//!
//! Each role is a trait with a JSON-over-HTTP client (`http`) and one or
//! more deterministic in-process mocks (`mock`), so the whole pipeline runs
//! and tests with no model servers. Responses from remote backends are
//! schema-validated before they reach callers; anything that fails
//! validation surfaces as a typed [`GatewayError::Protocol`], never a panic.

pub mod http;
pub mod mock;

use crate::model::{BBox, BlockCategory, ModelError, MultiVec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gateway roles, used in errors and endpoint configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Encode,
    Detect,
    Generate,
    Judge,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Role::Encode => "encode",
            Role::Detect => "detect",
            Role::Generate => "generate",
            Role::Judge => "judge",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    /// Transport-level failure that persisted through the retry budget.
    #[error("{role} backend unreachable after {attempts} attempt(s): {detail}")]
    Transport {
        role: Role,
        attempts: u32,
        detail: String,
    },
    /// Response bytes that do not satisfy the wire schema. Not retried.
    #[error("{role} backend returned a malformed response: {detail}")]
    Protocol { role: Role, detail: String },
    /// The configured backend cannot serve the requested modality.
    #[error("{role} backend does not support modality {modality:?}")]
    UnsupportedModality { role: Role, modality: Modality },
    /// Generation requires at least one evidence item.
    #[error("generate request carries no evidence")]
    EmptyEvidence,
}

impl GatewayError {
    pub fn role(&self) -> Option<Role> {
        match self {
            GatewayError::Transport { role, .. }
            | GatewayError::Protocol { role, .. }
            | GatewayError::UnsupportedModality { role, .. } => Some(*role),
            GatewayError::EmptyEvidence => Some(Role::Generate),
        }
    }

    /// True for failures a caller may retry at a higher level; protocol
    /// and precondition errors are final.
    pub fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

/// Input modality of an encode request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Audio,
    Text,
}

/// Where an encode payload lives: a path/URI, or inline base64 bytes.
///
/// A path may carry a `#x0,y0,x1,y1` fragment naming a crop region of the
/// referenced image; backends encode just that region. Mocks treat the
/// full string (fragment included) as the lookup key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadRef {
    Path(String),
    Base64(String),
}

impl PayloadRef {
    /// Reference to the crop of `image_ref` bounded by `bbox`.
    pub fn crop(image_ref: &str, bbox: BBox) -> Self {
        PayloadRef::Path(format!("{image_ref}#{bbox}"))
    }

    /// Inline payload holding UTF-8 text (base64-encoded on the wire).
    pub fn inline_text(text: &str) -> Self {
        use base64::Engine;
        PayloadRef::Base64(base64::engine::general_purpose::STANDARD.encode(text.as_bytes()))
    }

    /// The raw bytes of an inline payload.
    pub fn decode_inline(&self) -> Result<Vec<u8>, GatewayError> {
        match self {
            PayloadRef::Path(p) => Err(GatewayError::Protocol {
                role: Role::Encode,
                detail: format!("payload {p:?} is a path, not inline bytes"),
            }),
            PayloadRef::Base64(b64) => {
                use base64::Engine;
                base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| GatewayError::Protocol {
                        role: Role::Encode,
                        detail: format!("invalid base64 payload: {e}"),
                    })
            }
        }
    }

    pub fn key(&self) -> &str {
        match self {
            PayloadRef::Path(s) | PayloadRef::Base64(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub id: String,
    pub modality: Modality,
    pub payload_ref: PayloadRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub id: String,
    pub vectors: Vec<Vec<f32>>,
}

impl EncodeResponse {
    /// Schema checks shared by every backend: the response must echo the
    /// request id and carry at least one row, all rows equal-length.
    pub fn validate(&self, req: &EncodeRequest) -> Result<(), GatewayError> {
        let fail = |detail: String| GatewayError::Protocol {
            role: Role::Encode,
            detail,
        };
        if self.id != req.id {
            return Err(fail(format!(
                "response id {:?} does not echo request id {:?}",
                self.id, req.id
            )));
        }
        if self.vectors.is_empty() {
            return Err(fail("response carries no vectors".into()));
        }
        let dim = self.vectors[0].len();
        if dim == 0 {
            return Err(fail("response vectors have zero dimension".into()));
        }
        if let Some((i, row)) = self
            .vectors
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != dim)
        {
            return Err(fail(format!(
                "vector row {i} has length {}, expected {dim}",
                row.len()
            )));
        }
        Ok(())
    }

    /// Validate and convert to a `MultiVec`.
    pub fn into_multivec(self, req: &EncodeRequest) -> Result<MultiVec, GatewayError> {
        self.validate(req)?;
        MultiVec::new(self.vectors).map_err(|e: ModelError| GatewayError::Protocol {
            role: Role::Encode,
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub id: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedBlock {
    pub bbox: BBox,
    pub category: BlockCategory,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub id: String,
    pub blocks: Vec<DetectedBlock>,
}

impl DetectResponse {
    /// An empty block list is valid (a page with no detected layout).
    /// Category membership and bbox ordering are enforced during
    /// deserialization; this checks the id echo and confidence range.
    pub fn validate(&self, req: &DetectRequest) -> Result<(), GatewayError> {
        let fail = |detail: String| GatewayError::Protocol {
            role: Role::Detect,
            detail,
        };
        if self.id != req.id {
            return Err(fail(format!(
                "response id {:?} does not echo request id {:?}",
                self.id, req.id
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if !(0.0..=1.0).contains(&b.confidence) {
                return Err(fail(format!(
                    "block {i} confidence {} outside [0, 1]",
                    b.confidence
                )));
            }
        }
        Ok(())
    }
}

/// The query as handed to encode/generate: a spoken-audio reference or text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRef {
    AudioRef(String),
    Text(String),
}

impl QueryRef {
    pub fn modality(&self) -> Modality {
        match self {
            QueryRef::AudioRef(_) => Modality::Audio,
            QueryRef::Text(_) => Modality::Text,
        }
    }

    pub fn to_payload(&self) -> PayloadRef {
        match self {
            QueryRef::AudioRef(p) => PayloadRef::Path(p.clone()),
            QueryRef::Text(t) => PayloadRef::inline_text(t),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            QueryRef::AudioRef(s) | QueryRef::Text(s) => s,
        }
    }
}

/// One evidence image handed to the generator: a whole page when `bbox`
/// is absent, otherwise the crop of `image_ref` it bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub id: String,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub id: String,
    pub query_ref: QueryRef,
    /// Order is preserved verbatim into the model prompt.
    pub evidence: Vec<EvidenceItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub id: String,
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_audio_ref: Option<String>,
}

impl GenerateResponse {
    pub fn validate(&self, req: &GenerateRequest) -> Result<(), GatewayError> {
        let fail = |detail: String| GatewayError::Protocol {
            role: Role::Generate,
            detail,
        };
        if self.id != req.id {
            return Err(fail(format!(
                "response id {:?} does not echo request id {:?}",
                self.id, req.id
            )));
        }
        if self.answer_text.is_empty() {
            return Err(fail("answer_text is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub id: String,
    pub question: String,
    pub reference: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub id: String,
    /// Graded correctness in `[0, 1]`.
    pub verdict: f64,
}

impl JudgeResponse {
    pub fn validate(&self, req: &JudgeRequest) -> Result<(), GatewayError> {
        let fail = |detail: String| GatewayError::Protocol {
            role: Role::Judge,
            detail,
        };
        if self.id != req.id {
            return Err(fail(format!(
                "response id {:?} does not echo request id {:?}",
                self.id, req.id
            )));
        }
        if !(0.0..=1.0).contains(&self.verdict) {
            return Err(fail(format!("verdict {} outside [0, 1]", self.verdict)));
        }
        Ok(())
    }
}

/// Embedding encoder boundary. Implementations must be deterministic for
/// identical requests and safe to call from many threads.
pub trait EncoderGateway: Send + Sync {
    fn encode(&self, req: &EncodeRequest) -> Result<EncodeResponse, GatewayError>;

    /// Encode and validate into a `MultiVec` in one step.
    fn encode_multivec(&self, req: &EncodeRequest) -> Result<MultiVec, GatewayError> {
        self.encode(req)?.into_multivec(req)
    }
}

/// Layout detector boundary.
pub trait LayoutGateway: Send + Sync {
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, GatewayError>;
}

/// Answer generator boundary. `generate` must reject empty evidence.
pub trait GeneratorGateway: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GatewayError>;
}

/// Answer judge boundary.
pub trait JudgeGateway: Send + Sync {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeResponse, GatewayError>;
}

/// The full set of model boundaries the pipeline needs.
pub struct Gateways {
    pub encoder: Box<dyn EncoderGateway>,
    pub detector: Box<dyn LayoutGateway>,
    pub generator: Box<dyn GeneratorGateway>,
    pub judge: Box<dyn JudgeGateway>,
}
