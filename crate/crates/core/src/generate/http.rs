//! Raw-completions HTTP client with bounded exponential-backoff retries.

use super::{strip_candidate, Backend, BackendError, Generation, GenerationRequest, SamplingParams};
use crate::prompt::Sentinels;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::thread;
use std::time::Duration;

#[derive(Serialize)]
struct CompletionBody<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    n: usize,
    temperature: f64,
    top_p: f64,
    max_tokens: usize,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    index: Option<usize>,
}

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    model: Option<String>,
    max_retries: u32,
    backoff: Duration,
    sentinels: Sentinels,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `base_url` is the API root; requests go to `{base_url}/completions`.
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        model: Option<String>,
        max_retries: u32,
        backoff: Duration,
        request_timeout: Duration,
        sentinels: Sentinels,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: format!("{}/completions", base_url.trim_end_matches('/')),
            api_key,
            model,
            max_retries,
            backoff,
            sentinels,
            client,
        })
    }

    fn request_id(&self, request: &GenerationRequest<'_>) -> String {
        let digest = Sha256::new()
            .chain_update(request.id.as_bytes())
            .chain_update([0])
            .chain_update(request.prompt.as_bytes())
            .finalize();
        format!("fimforge-{}", hex::encode(&digest[..8]))
    }
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        match &self.model {
            Some(m) => format!("http:{}:{m}", self.endpoint),
            None => format!("http:{}", self.endpoint),
        }
    }

    fn generate(&self, request: &GenerationRequest<'_>, params: &SamplingParams) -> Result<Generation, BackendError> {
        let request_id = self.request_id(request);
        let body = CompletionBody {
            model: self.model.as_deref(),
            prompt: request.prompt,
            n: params.n,
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_new_tokens,
            stop: &params.stop,
        };

        let mut last_error = String::new();
        let attempts = self.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.backoff * 2u32.saturating_pow(attempt - 1);
                log::warn!("{request_id}: retry {attempt}/{} in {delay:?} after {last_error}", self.max_retries);
                thread::sleep(delay);
            }
            let mut req = self
                .client
                .post(&self.endpoint)
                .header("X-Request-Id", &request_id)
                .json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last_error = format!("transport: {e}");
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status == 401 || status == 403 {
                return Err(BackendError::Auth {
                    url: self.endpoint.clone(),
                    status,
                });
            }
            if retryable(status) {
                last_error = format!("HTTP {status}");
                continue;
            }
            let text = resp.text().map_err(|e| BackendError::Malformed {
                request_id: request_id.clone(),
                detail: e.to_string(),
            })?;
            if !(200..300).contains(&status) {
                return Err(BackendError::Rejected {
                    request_id,
                    status,
                    body: text,
                });
            }
            let parsed: CompletionResponse = serde_json::from_str(&text).map_err(|e| BackendError::Malformed {
                request_id: request_id.clone(),
                detail: e.to_string(),
            })?;
            let mut choices: Vec<(usize, String)> = parsed
                .choices
                .into_iter()
                .enumerate()
                .map(|(pos, c)| (c.index.unwrap_or(pos), c.text))
                .collect();
            choices.sort_by_key(|(i, _)| *i);
            let candidates: Vec<String> = choices
                .into_iter()
                .take(params.n)
                .map(|(_, t)| strip_candidate(&t, &self.sentinels, &params.stop))
                .collect();
            if candidates.len() < params.n {
                log::warn!("{request_id}: asked for {} completions, got {}", params.n, candidates.len());
            }
            return Ok(Generation {
                partial: candidates.len() < params.n,
                candidates,
            });
        }
        Err(BackendError::RetriesExhausted {
            request_id,
            attempts,
            last_error,
        })
    }
}
