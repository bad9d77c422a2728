//! Late-interaction multimodal retrieval engine and RAG pipeline.
//!
//! A document knowledge base is a pool of page images, each embedded as a
//! multi-vector by an external encoder and decomposed into layout blocks
//! (chart, table, text, natural image) whose crops are embedded too. A
//! spoken or textual query is answered in two retrieval stages, exhaustive
//! MaxSim ranking over pages and then threshold-filtered block reranking
//! within the candidates, before the ordered evidence is handed to a
//! generator. Everything model-shaped sits behind gateway traits with
//! deterministic in-process mocks, so the engine, the evaluation harness
//! (nDCG@k, answer accuracy, latency profiling), and the binary index
//! round-trip are fully testable offline.

pub mod eval;
pub mod gateway;
pub mod index;
pub mod model;
pub mod rerank;
pub mod retrieval;
pub mod timing;

pub use eval::{evaluate_qa, evaluate_retrieval, ndcg_at_k, profile_latency, EvalMode, EvalReport};
pub use gateway::Gateways;
pub use index::{ingest, load, save, CorpusManifest, IndexError, KnowledgeBase, QuerySet};
pub use model::{
    maxsim, maxsim_batch, BlockCategory, BlockRecord, MultiVec, PageRecord, RankedPage, RefinedPage,
};
pub use rerank::{rerank_candidates, RerankConfig};
pub use retrieval::{query_pipeline, retrieve, PipelineConfig, PipelineOutput, RetrievalConfig};
pub use timing::StageTimings;
