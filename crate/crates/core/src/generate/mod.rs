//! Candidate middle generation.
//!
//! A [`Backend`] turns one FIM prompt into up to `n` candidate middles. Two
//! implementations exist: [`HttpBackend`] posts the untemplated prompt to a
//! raw completions endpoint, and [`StubBackend`] mutates the golden middle
//! with seeded operators so the whole pipeline runs offline.

mod http;
pub mod mutate;

pub use http::HttpBackend;
pub use mutate::{mutate_golden, MutationSet};

use crate::prompt::Sentinels;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub stop: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            n: 5,
            temperature: 0.7,
            top_p: 0.95,
            max_new_tokens: 512,
            stop: Vec::new(),
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n < 2 {
            return Err(BackendError::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.temperature > 0.0) {
            return Err(BackendError::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    /// Stable identifier of the segmentation being completed.
    pub id: &'a str,
    pub prompt: &'a str,
    /// The golden middle; only offline backends read it.
    pub reference_middle: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub candidates: Vec<String>,
    /// Fewer than `n` candidates came back.
    pub partial: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("authentication rejected by {url} (HTTP {status})")]
    Auth { url: String, status: u16 },
    #[error("request {request_id} failed after {attempts} attempt(s): {last_error}")]
    RetriesExhausted {
        request_id: String,
        attempts: u32,
        last_error: String,
    },
    #[error("request {request_id} rejected: HTTP {status}: {body}")]
    Rejected {
        request_id: String,
        status: u16,
        body: String,
    },
    #[error("request {request_id}: malformed response: {detail}")]
    Malformed { request_id: String, detail: String },
    #[error("stub backend needs the golden middle for {0}")]
    MissingReference(String),
}

impl BackendError {
    /// Errors that invalidate every later request too.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::Auth { .. } | BackendError::Config(_))
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    fn generate(&self, request: &GenerationRequest<'_>, params: &SamplingParams) -> Result<Generation, BackendError>;
}

/// Cuts `text` at the first sentinel or stop string it contains.
pub fn strip_candidate(text: &str, sentinels: &Sentinels, stop: &[String]) -> String {
    let cut = sentinels
        .all()
        .into_iter()
        .chain(stop.iter().map(String::as_str))
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

/// Offline backend: the golden middle plus `n - 1` seeded mutants of it.
#[derive(Debug, Clone)]
pub struct StubBackend {
    seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn request_seed(&self, id: &str) -> u64 {
        let digest = Sha256::new().chain_update(self.seed.to_le_bytes()).chain_update(id.as_bytes()).finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

impl Backend for StubBackend {
    fn id(&self) -> String {
        format!("stub:{}", self.seed)
    }

    fn generate(&self, request: &GenerationRequest<'_>, params: &SamplingParams) -> Result<Generation, BackendError> {
        let middle = request
            .reference_middle
            .ok_or_else(|| BackendError::MissingReference(request.id.to_string()))?;
        let set = mutate_golden(middle, self.request_seed(request.id), params.n.saturating_sub(1))
            .map_err(|e| BackendError::Malformed {
                request_id: request.id.to_string(),
                detail: e.to_string(),
            })?;
        Ok(Generation {
            partial: set.candidates.len() < params.n,
            candidates: set.candidates,
        })
    }
}

/// Runs every request on a pool of `workers` threads; results come back in
/// request order whatever the completion order.
pub fn generate_all(
    backend: &dyn Backend,
    requests: &[GenerationRequest<'_>],
    params: &SamplingParams,
    workers: usize,
) -> Vec<Result<Generation, BackendError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| requests.par_iter().map(|r| backend.generate(r, params)).collect())
}
