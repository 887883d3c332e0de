use std::thread;
use std::time::Duration;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionRequest, Provider, ProviderKind, RawCompletion};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "COFEE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with +-50% jitter. `attempt` is 1-based.
    fn delay(&self, attempt: u32) -> Duration {
        let base = self.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
        let jitter: f64 = rand::thread_rng().gen_range(0.5..1.5);
        Duration::from_millis((base as f64 * jitter) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-5.2".into(),
            timeout_secs: 300,
            retry: RetryPolicy::default(),
        }
    }
}

fn is_retryable(status: u16) -> bool {
    matches!(status, 408 | 409 | 425 | 429 | 500 | 502 | 503 | 504)
}

/// OpenAI-compatible chat-completions client.
pub struct LiveProvider {
    config: LiveConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl LiveProvider {
    pub fn new(config: LiveConfig, api_key: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::ProviderConfig(e.to_string()))?;
        Ok(Self {
            config,
            api_key: api_key.into(),
            client,
        })
    }

    /// Reads the API key from `COFEE_API_KEY`.
    pub fn from_env(config: LiveConfig) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::ProviderConfig(format!("{API_KEY_ENV} is not set")))?;
        Self::new(config, key)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn parse_body(body: &str) -> Result<RawCompletion> {
        let v: serde_json::Value = serde_json::from_str(body)
            .map_err(|e| Error::SchemaViolation(format!("provider returned non-JSON body: {e}")))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| Error::SchemaViolation("provider body lacks choices[0].message.content".into()))?;
        Ok(RawCompletion {
            text: text.to_string(),
            input_tokens: v.pointer("/usage/prompt_tokens").and_then(|t| t.as_u64()),
            output_tokens: v.pointer("/usage/completion_tokens").and_then(|t| t.as_u64()),
            origin: None,
        })
    }
}

impl Provider for LiveProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion> {
        let body = json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_payload},
            ],
        });
        let max = self.config.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=max {
            let sent = self
                .client
                .post(self.endpoint())
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            match sent {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().unwrap_or_default();
                    if (200..300).contains(&status) {
                        return Self::parse_body(&text);
                    }
                    if !is_retryable(status) {
                        return Err(Error::ProviderRejection { status, body: text });
                    }
                    last_error = format!("status {status}");
                }
                Err(e) => last_error = e.to_string(),
            }
            if attempt < max {
                warn!(
                    "request {} attempt {attempt}/{max} failed: {last_error}",
                    request.request_id
                );
                thread::sleep(self.config.retry.delay(attempt));
            }
        }
        Err(Error::Transport {
            attempts: max,
            message: last_error,
        })
    }
}
