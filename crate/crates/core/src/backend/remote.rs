//! Remote backend speaking the de-facto chat-completions HTTP wire format.
//!
//! Prompts render to a single text with an explicit JSON-schema instruction
//! block; the prompt and schema files ship in `prompts/` and `schemas/` and
//! are embedded at compile time. Malformed model output triggers a
//! corrective re-prompt, up to 3 retries, before the call surfaces a
//! backend failure.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::config::BackendConfig;
use crate::error::{Error, Result};

use super::{
    validate_request, Backend, BackendRequest, BackendResponse, Judgment, ProposalDraft,
    SynthesisDraft, Task, TaskPayload,
};

const MAX_ATTEMPTS: u32 = 4; // initial call + 3 corrective retries

struct PromptSpec {
    template: &'static str,
    schema: &'static str,
}

fn prompt_spec(task: Task) -> PromptSpec {
    match task {
        Task::Synthesize => PromptSpec {
            template: include_str!("../../prompts/synthesize.txt"),
            schema: include_str!("../../schemas/synthesize.json"),
        },
        Task::Extract => PromptSpec {
            template: include_str!("../../prompts/extract.txt"),
            schema: include_str!("../../schemas/extract.json"),
        },
        Task::InferRelation => PromptSpec {
            template: include_str!("../../prompts/infer_relation.txt"),
            schema: include_str!("../../schemas/infer_relation.json"),
        },
        Task::AggregateCommon => PromptSpec {
            template: include_str!("../../prompts/aggregate_common.txt"),
            schema: include_str!("../../schemas/aggregate_common.json"),
        },
        Task::ExtractSalient => PromptSpec {
            template: include_str!("../../prompts/extract_salient.txt"),
            schema: include_str!("../../schemas/extract_salient.json"),
        },
        Task::SynergyTension => PromptSpec {
            template: include_str!("../../prompts/synergy_tension.txt"),
            schema: include_str!("../../schemas/synergy_tension.json"),
        },
        Task::Answer => PromptSpec {
            template: include_str!("../../prompts/answer.txt"),
            schema: include_str!("../../schemas/answer.json"),
        },
        Task::Judge => PromptSpec {
            template: include_str!("../../prompts/judge.txt"),
            schema: include_str!("../../schemas/judge.json"),
        },
        Task::Embed => PromptSpec { template: "", schema: "{}" },
    }
}

/// Requests-per-minute token bucket plus a concurrent-call turnstile.
struct Limiter {
    bucket: Mutex<BucketState>,
    capacity: f64,
    refill_per_sec: f64,
    turnstile: Mutex<usize>,
    max_concurrent: usize,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl Limiter {
    fn new(requests_per_minute: u32, max_concurrent: usize) -> Self {
        let capacity = requests_per_minute.max(1) as f64;
        Self {
            bucket: Mutex::new(BucketState { tokens: capacity, last_refill: Instant::now() }),
            capacity,
            refill_per_sec: capacity / 60.0,
            turnstile: Mutex::new(0),
            max_concurrent: max_concurrent.max(1),
        }
    }

    fn acquire(&self) {
        loop {
            {
                let mut state = self.bucket.lock().expect("limiter lock");
                let elapsed = state.last_refill.elapsed().as_secs_f64();
                state.tokens = (state.tokens + elapsed * self.refill_per_sec).min(self.capacity);
                state.last_refill = Instant::now();
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    break;
                }
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        loop {
            {
                let mut active = self.turnstile.lock().expect("turnstile lock");
                if *active < self.max_concurrent {
                    *active += 1;
                    return;
                }
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    fn release(&self) {
        let mut active = self.turnstile.lock().expect("turnstile lock");
        *active = active.saturating_sub(1);
    }
}

/// Chat-completions client. Model identity, base URL, and credentials come
/// from configuration.
pub struct RemoteBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        if config.api_key.is_none() {
            return Err(Error::InvalidConfig(
                "remote backend requires RGMEM_API_KEY".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::BackendFailure(e.to_string()))?;
        let limiter = Limiter::new(config.requests_per_minute, config.max_concurrent);
        Ok(Self { config, client, limiter })
    }

    fn chat(&self, system: &str, user: &str, budget: u32) -> Result<String> {
        self.limiter.acquire();
        let result = self.chat_inner(system, user, budget);
        self.limiter.release();
        result
    }

    fn chat_inner(&self, system: &str, user: &str, budget: u32) -> Result<String> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "max_tokens": budget.max(16),
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let response = self
            .client
            .post(&url)
            .bearer_auth(self.config.api_key.as_deref().unwrap_or(""))
            .json(&body)
            .send()
            .map_err(|e| Error::BackendFailure(format!("request failed: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| Error::BackendFailure(format!("response read failed: {e}")))?;
        if !status.is_success() {
            return Err(Error::BackendFailure(format!("status {status}: {text}")));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::BackendFailure(format!("non-json response: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::BackendFailure("response missing message content".into()))
    }

    fn render_prompt(task: Task, payload_json: &str) -> String {
        let spec = prompt_spec(task);
        spec.template
            .replace("{{payload}}", payload_json)
            .replace("{{schema}}", spec.schema.trim())
    }

    fn parse_structured(task: Task, content: &str) -> Result<BackendResponse> {
        // Models occasionally wrap JSON in code fences; strip them.
        let trimmed = content.trim();
        let stripped = trimmed
            .strip_prefix("```json")
            .or_else(|| trimmed.strip_prefix("```"))
            .map(|s| s.trim_end_matches("```").trim())
            .unwrap_or(trimmed);
        let value: Value = serde_json::from_str(stripped)
            .map_err(|e| Error::SchemaViolation(format!("output is not JSON: {e}")))?;
        match task {
            Task::Synthesize => {
                let draft: SynthesisDraft = serde_json::from_value(value)
                    .map_err(|e| Error::SchemaViolation(e.to_string()))?;
                if draft.lambda_fact.trim().is_empty() {
                    return Err(Error::SchemaViolation("lambda_fact is empty".into()));
                }
                Ok(BackendResponse::Synthesis(draft))
            }
            Task::Extract => {
                let draft: ProposalDraft = serde_json::from_value(value)
                    .map_err(|e| Error::SchemaViolation(e.to_string()))?;
                Ok(BackendResponse::Extraction(draft))
            }
            Task::InferRelation => Ok(BackendResponse::RelationSummary(required_str(
                &value, "summary",
            )?)),
            Task::AggregateCommon => Ok(BackendResponse::Sigma(required_str(&value, "sigma")?)),
            Task::ExtractSalient => {
                let delta = value["delta"].as_str().unwrap_or_default().to_string();
                Ok(BackendResponse::Delta(delta))
            }
            Task::SynergyTension => Ok(BackendResponse::Synergy {
                sigma: required_str(&value, "sigma")?,
                delta: value["delta"].as_str().unwrap_or_default().to_string(),
            }),
            Task::Answer => Ok(BackendResponse::Answer(required_str(&value, "answer")?)),
            Task::Judge => {
                let verdict = required_str(&value, "verdict")?;
                match verdict.to_lowercase().as_str() {
                    "correct" => Ok(BackendResponse::Judgment(Judgment::Correct)),
                    "incorrect" => Ok(BackendResponse::Judgment(Judgment::Incorrect)),
                    other => Err(Error::SchemaViolation(format!(
                        "verdict must be correct|incorrect, got {other:?}"
                    ))),
                }
            }
            Task::Embed => Err(Error::SchemaViolation("embed is not a chat task".into())),
        }
    }
}

fn required_str(value: &Value, field: &str) -> Result<String> {
    value[field]
        .as_str()
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string)
        .ok_or_else(|| Error::SchemaViolation(format!("missing or empty field {field:?}")))
}

impl Backend for RemoteBackend {
    fn call(&self, request: &BackendRequest) -> Result<BackendResponse> {
        validate_request(request)?;
        let payload_json = serde_json::to_string_pretty(&request.payload)
            .map_err(|e| Error::SchemaViolation(e.to_string()))?;
        let system = Self::render_prompt(request.task, &payload_json);
        let mut user = "Respond now with a single JSON object.".to_string();
        let mut last_err = None;
        for _ in 0..MAX_ATTEMPTS {
            let content = self.chat(&system, &user, request.budget)?;
            match Self::parse_structured(request.task, &content) {
                Ok(response) => return Ok(response),
                Err(e) => {
                    user = format!(
                        "Your previous output failed validation: {e}. \
                         Respond ONLY with a single JSON object matching the schema."
                    );
                    last_err = Some(e);
                }
            }
        }
        Err(Error::BackendFailure(format!(
            "schema validation failed after {MAX_ATTEMPTS} attempts: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.limiter.acquire();
        let result = self.embed_inner(text);
        self.limiter.release();
        result
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }
}

impl RemoteBackend {
    fn embed_inner(&self, text: &str) -> Result<Vec<f64>> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = json!({"model": self.config.embed_model, "input": text});
        let response = self
            .client
            .post(&url)
            .bearer_auth(self.config.api_key.as_deref().unwrap_or(""))
            .json(&body)
            .send()
            .map_err(|e| Error::BackendFailure(format!("embed request failed: {e}")))?;
        let status = response.status();
        let value: Value = response
            .json()
            .map_err(|e| Error::BackendFailure(format!("embed response: {e}")))?;
        if !status.is_success() {
            return Err(Error::BackendFailure(format!("embed status {status}")));
        }
        let raw = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::BackendFailure("embed response missing vector".into()))?;
        let mut vec: Vec<f64> = raw.iter().filter_map(Value::as_f64).collect();
        if vec.len() != raw.len() {
            return Err(Error::BackendFailure("embed vector has non-numeric entries".into()));
        }
        let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut vec {
                *v /= norm;
            }
        }
        Ok(vec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_structured_accepts_fenced_json() {
        let out = RemoteBackend::parse_structured(
            Task::Answer,
            "```json\n{\"answer\": \"forty-two\"}\n```",
        )
        .unwrap();
        assert_eq!(out, BackendResponse::Answer("forty-two".into()));
    }

    #[test]
    fn parse_structured_rejects_missing_fields() {
        assert!(RemoteBackend::parse_structured(Task::Answer, "{\"nope\": 1}").is_err());
        assert!(RemoteBackend::parse_structured(Task::Judge, "{\"verdict\": \"maybe\"}").is_err());
        assert!(RemoteBackend::parse_structured(Task::Synthesize, "{\"lambda_fact\": \"\"}").is_err());
    }

    #[test]
    fn prompt_templates_render_payload_and_schema() {
        let rendered = RemoteBackend::render_prompt(Task::Synthesize, "{\"x\":1}");
        assert!(rendered.contains("{\"x\":1}"));
        assert!(!rendered.contains("{{payload}}"));
        assert!(!rendered.contains("{{schema}}"));
    }

    #[test]
    fn limiter_allows_burst_up_to_capacity() {
        let limiter = Limiter::new(600, 4);
        let start = Instant::now();
        for _ in 0..5 {
            limiter.acquire();
            limiter.release();
        }
        assert!(start.elapsed() < Duration::from_secs(1));
    }

    #[test]
    fn remote_requires_api_key() {
        let config = BackendConfig::default();
        assert!(RemoteBackend::new(config).is_err());
    }
}
