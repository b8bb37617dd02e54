//! Chat-completions HTTP client with bounded concurrency and exponential
//! backoff.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::prompt::{PromptText, FINAL_TEXT_ONLY};
use crate::backends::{Capabilities, GenerativeBackend, TemplateId};
use crate::error::{Error, Result};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "MFSIM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Total attempts per request, including the first.
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_true")]
    pub send_seed: bool,
    /// Read from [`API_KEY_ENV`] when absent.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

fn default_attempts() -> u32 {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_backoff_ms() -> u64 {
    30_000
}
fn default_in_flight() -> usize {
    8
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_true() -> bool {
    true
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            max_attempts: default_attempts(),
            initial_backoff_ms: default_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout_secs(),
            send_seed: true,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Drop `<think>...</think>` spans and surrounding whitespace.
pub fn strip_reasoning(text: &str) -> String {
    static PATTERN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = PATTERN.get_or_init(|| Regex::new(r"(?s)<think>.*?</think>").expect("valid regex"));
    re.replace_all(text, "").trim().to_string()
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.free.lock().expect("gate poisoned") += 1;
        self.gate.cv.notify_one();
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteBackend {
    pub fn new(mut cfg: RemoteConfig) -> Result<Self> {
        if cfg.api_key.is_none() {
            cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::backend(format!("http client: {e}")))?;
        let gate = Gate::new(cfg.max_in_flight);
        Ok(RemoteBackend { cfg, client, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .cfg
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.cfg.max_backoff_ms);
        Duration::from_millis(ms)
    }

    fn attempt(&self, request: &ChatRequest) -> std::result::Result<String, Attempt> {
        let mut builder = self.client.post(&self.cfg.endpoint).json(request);
        if let Some(key) = &self.cfg.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| Attempt::Retry(format!("transport: {e}")))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(Error::backend(format!(
                "HTTP {status}: {body}"
            ))));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(Error::backend(format!("bad response body: {e}"))))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(content)
    }

    /// Send one chat request, retrying transport errors, 5xx and 429.
    pub fn remote_complete(&self, request: &ChatRequest) -> Result<String> {
        let _slot = self.gate.enter();
        let attempts = self.cfg.max_attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            match self.attempt(request) {
                Ok(text) => {
                    let text = strip_reasoning(&text);
                    if text.is_empty() {
                        return Err(Error::backend("empty completion"));
                    }
                    return Ok(text);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("attempt {}/{attempts} failed: {msg}", i + 1);
                    last = msg;
                    if i + 1 < attempts {
                        std::thread::sleep(self.backoff(i));
                    }
                }
            }
        }
        Err(Error::backend(format!(
            "gave up after {attempts} attempts: {last}"
        )))
    }

    pub fn request_for(&self, prompt: &PromptText, seed: u64, temperature: f64) -> ChatRequest {
        let content = match prompt.template_id {
            TemplateId::Policy if !prompt.text.ends_with(FINAL_TEXT_ONLY) => {
                format!("{}\n{FINAL_TEXT_ONLY}", prompt.text)
            }
            _ => prompt.text.clone(),
        };
        ChatRequest {
            model: self.cfg.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content,
            }],
            temperature,
            seed: self.cfg.send_seed.then_some(seed),
        }
    }
}

impl GenerativeBackend for RemoteBackend {
    fn generate(&self, prompt: &PromptText, seed: u64, temperature: f64) -> Result<String> {
        self.remote_complete(&self.request_for(prompt, seed, temperature))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_logprob: false,
        }
    }
}
