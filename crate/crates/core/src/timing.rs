//! Per-stage wall-clock accounting for pipeline runs.

use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Stage names in canonical emission order.
pub const STAGE_NAMES: [&str; 5] = ["encode_query", "retrieve", "rerank", "generate", "total"];

/// Monotonic wall-clock durations (milliseconds) for one pipeline run.
///
/// `total_ms` spans the whole run, so it is always at least the sum of the
/// individual stages minus scheduling slack.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub encode_query_ms: f64,
    pub retrieve_ms: f64,
    pub rerank_ms: f64,
    pub generate_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    /// (stage name, duration) pairs in canonical order, `total` last.
    pub fn stages(&self) -> [(&'static str, f64); 5] {
        [
            ("encode_query", self.encode_query_ms),
            ("retrieve", self.retrieve_ms),
            ("rerank", self.rerank_ms),
            ("generate", self.generate_ms),
            ("total", self.total_ms),
        ]
    }

    /// Sum of the recorded stages, excluding `total`.
    pub fn stage_sum_ms(&self) -> f64 {
        self.encode_query_ms + self.retrieve_ms + self.rerank_ms + self.generate_ms
    }
}

/// Builds a `StageTimings` by timing closures as the pipeline advances.
#[derive(Debug)]
pub struct StageRecorder {
    started: Instant,
    timings: StageTimings,
}

impl StageRecorder {
    pub fn start() -> Self {
        Self {
            started: Instant::now(),
            timings: StageTimings::default(),
        }
    }

    /// Run `f`, charging its wall time to the stage selected by `set`.
    pub fn time<T>(&mut self, set: fn(&mut StageTimings, f64), f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        set(&mut self.timings, t0.elapsed().as_secs_f64() * 1e3);
        out
    }

    /// Close the run: stamps `total_ms` and returns the timings.
    pub fn finish(mut self) -> StageTimings {
        self.timings.total_ms = self.started.elapsed().as_secs_f64() * 1e3;
        self.timings
    }
}

pub fn set_encode_query(t: &mut StageTimings, ms: f64) {
    t.encode_query_ms = ms;
}
pub fn set_retrieve(t: &mut StageTimings, ms: f64) {
    t.retrieve_ms = ms;
}
pub fn set_rerank(t: &mut StageTimings, ms: f64) {
    t.rerank_ms = ms;
}
pub fn set_generate(t: &mut StageTimings, ms: f64) {
    t.generate_ms = ms;
}
