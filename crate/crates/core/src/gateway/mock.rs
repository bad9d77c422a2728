//! Deterministic in-process gateway backends.
//!
//! Two encoders ship here: [`HashEncoder`] derives pseudo-random unit rows
//! from a digest of the request, giving uniform coverage with zero setup;
//! [`PlantedEncoder`] maps whitespace tokens onto one-hot axes of a fixed
//! vocabulary, so relevance is fully controllable: a query row dotted with
//! a document row is 1 exactly when the two tokens match, which makes
//! MaxSim scores plain overlap counts. Every mock is a pure function of its
//! request.

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

/// Encoder producing unit-norm rows seeded from a SHA-256 digest of the
/// modality and payload key, so identical requests yield identical vectors
/// across processes and platforms.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    pub dim: usize,
    pub rows: usize,
}

impl HashEncoder {
    pub fn new(dim: usize, rows: usize) -> Self {
        Self { dim, rows }
    }
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self { dim: 16, rows: 4 }
    }
}

impl EncoderGateway for HashEncoder {
    fn encode(&self, req: &EncodeRequest) -> Result<EncodeResponse, GatewayError> {
        let mut hasher = Sha256::new();
        hasher.update([req.modality as u8]);
        hasher.update(req.payload_ref.key().as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Vec::with_capacity(self.rows);
        for _ in 0..self.rows {
            let mut row: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let norm = crate::model::l2_norm(&row);
            if norm == 0.0 {
                row[0] = 1.0; // astronomically unlikely, but keep rows unit
            } else {
                for x in &mut row {
                    *x = (*x as f64 / norm) as f32;
                }
            }
            vectors.push(row);
        }
        Ok(EncodeResponse {
            id: req.id.clone(),
            vectors,
        })
    }
}

/// Fixture backing a [`PlantedEncoder`]: the vocabulary (token -> axis in
/// declaration order) plus token lists for path-addressed payloads (page
/// images, crops, audio files). Inline text payloads are tokenized on
/// whitespace directly.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct PlantedFixture {
    pub vocab: Vec<String>,
    #[serde(default)]
    pub documents: HashMap<String, Vec<String>>,
}

/// Encoder mapping each token to a one-hot row on that token's vocabulary
/// axis. Embedding dimension equals the vocabulary size.
#[derive(Debug, Clone)]
pub struct PlantedEncoder {
    axes: BTreeMap<String, usize>,
    documents: HashMap<String, Vec<String>>,
    dim: usize,
}

impl PlantedEncoder {
    pub fn new(fixture: PlantedFixture) -> Self {
        let dim = fixture.vocab.len();
        let axes = fixture
            .vocab
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        Self {
            axes,
            documents: fixture.documents,
            dim,
        }
    }

    /// Vocabulary-only encoder; register path payloads with [`Self::with_document`].
    pub fn from_vocab<S: Into<String>>(vocab: impl IntoIterator<Item = S>) -> Self {
        Self::new(PlantedFixture {
            vocab: vocab.into_iter().map(Into::into).collect(),
            documents: HashMap::new(),
        })
    }

    pub fn with_document<S: Into<String>>(
        mut self,
        key: &str,
        tokens: impl IntoIterator<Item = S>,
    ) -> Self {
        self.documents.insert(
            key.to_string(),
            tokens.into_iter().map(Into::into).collect(),
        );
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn tokens_for(&self, req: &EncodeRequest) -> Result<Vec<String>, GatewayError> {
        match &req.payload_ref {
            PayloadRef::Base64(_) => {
                let bytes = req.payload_ref.decode_inline()?;
                let text = String::from_utf8(bytes).map_err(|e| GatewayError::Protocol {
                    role: Role::Encode,
                    detail: format!("inline payload is not UTF-8 text: {e}"),
                })?;
                Ok(text.split_whitespace().map(str::to_string).collect())
            }
            PayloadRef::Path(path) => {
                self.documents
                    .get(path)
                    .cloned()
                    .ok_or_else(|| GatewayError::Protocol {
                        role: Role::Encode,
                        detail: format!("planted encoder has no token fixture for path {path:?}"),
                    })
            }
        }
    }
}

impl EncoderGateway for PlantedEncoder {
    fn encode(&self, req: &EncodeRequest) -> Result<EncodeResponse, GatewayError> {
        let tokens = self.tokens_for(req)?;
        if tokens.is_empty() {
            return Err(GatewayError::Protocol {
                role: Role::Encode,
                detail: format!(
                    "planted encoder got an empty token list for request {:?}",
                    req.id
                ),
            });
        }
        let mut vectors = Vec::with_capacity(tokens.len());
        for token in &tokens {
            let axis = *self.axes.get(token).ok_or_else(|| GatewayError::Protocol {
                role: Role::Encode,
                detail: format!("token {token:?} is not in the planted vocabulary"),
            })?;
            let mut row = vec![0.0f32; self.dim];
            row[axis] = 1.0;
            vectors.push(row);
        }
        Ok(EncodeResponse {
            id: req.id.clone(),
            vectors,
        })
    }
}

/// Detector answering from a table keyed by `image_ref`. Pages absent from
/// the table detect as having no layout (an empty, valid block list).
/// Tracks how many times it was invoked.
#[derive(Debug, Default)]
pub struct FixtureDetector {
    fixtures: HashMap<String, Vec<DetectedBlock>>,
    calls: AtomicUsize,
}

impl FixtureDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_page(mut self, image_ref: &str, blocks: Vec<DetectedBlock>) -> Self {
        self.fixtures.insert(image_ref.to_string(), blocks);
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LayoutGateway for FixtureDetector {
    fn detect(&self, req: &DetectRequest) -> Result<DetectResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let blocks = self
            .fixtures
            .get(&req.image_ref)
            .cloned()
            .unwrap_or_default();
        Ok(DetectResponse {
            id: req.id.clone(),
            blocks,
        })
    }
}

/// Generator whose answer is the evidence ids joined with `|`, in request
/// order, so tests can assert exactly what reached the model and in what
/// order.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator;

impl EchoGenerator {
    /// The answer this generator produces for the given evidence ids.
    pub fn expected_answer<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
        ids.into_iter().collect::<Vec<_>>().join("|")
    }
}

impl GeneratorGateway for EchoGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GatewayError> {
        if req.evidence.is_empty() {
            return Err(GatewayError::EmptyEvidence);
        }
        let answer = Self::expected_answer(req.evidence.iter().map(|e| e.id.as_str()));
        Ok(GenerateResponse {
            id: req.id.clone(),
            answer_text: answer,
            answer_audio_ref: None,
        })
    }
}

/// Judge scoring 1.0 when candidate and reference match after trimming,
/// lowercasing, and whitespace collapsing, else 0.0.
#[derive(Debug, Clone, Default)]
pub struct StringMatchJudge;

pub(crate) fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl JudgeGateway for StringMatchJudge {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeResponse, GatewayError> {
        let verdict = if normalize_answer(&req.candidate) == normalize_answer(&req.reference) {
            1.0
        } else {
            0.0
        };
        Ok(JudgeResponse {
            id: req.id.clone(),
            verdict,
        })
    }
}

/// Wrapper that fails with a transport error for the first `failures`
/// calls, then delegates. For exercising retry and partial-failure paths.
pub struct FlakyGenerator<G> {
    inner: G,
    remaining: AtomicU32,
}

impl<G> FlakyGenerator<G> {
    pub fn new(inner: G, failures: u32) -> Self {
        Self {
            inner,
            remaining: AtomicU32::new(failures),
        }
    }
}

impl<G: GeneratorGateway> GeneratorGateway for FlakyGenerator<G> {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GatewayError> {
        let left = self.remaining.load(Ordering::SeqCst);
        if left > 0 {
            self.remaining.store(left - 1, Ordering::SeqCst);
            return Err(GatewayError::Transport {
                role: Role::Generate,
                attempts: 1,
                detail: "scripted failure".into(),
            });
        }
        self.inner.generate(req)
    }
}

/// The standard no-model stack: hash encoder, empty detector fixtures,
/// echo generator, string-match judge.
pub fn mock_gateways(dim: usize, rows: usize) -> Gateways {
    Gateways {
        encoder: Box::new(HashEncoder::new(dim, rows)),
        detector: Box::new(FixtureDetector::new()),
        generator: Box::new(EchoGenerator),
        judge: Box::new(StringMatchJudge),
    }
}
