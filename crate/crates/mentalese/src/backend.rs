//! Backend selection and the live HTTP completion backend.
//!
//! The live backend speaks a plain completions protocol:
//!
//! ```text
//! POST {base_url}/completions
//! Authorization: Bearer {api_key}            (omitted when no key is set)
//! {"model": ..., "prompt": ..., "n": ..., "temperature": ..., "stop": [...], "max_tokens": ...}
//!
//! 200 {"choices": [{"text": "...", "score": 1.5?}, ...]}
//! ```
//!
//! `score` is optional; when present it ranks candidates ahead of
//! frequency.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mentalese_core::meaning::{Backend, BackendError, BackendErrorKind, Completion, MockBackend, MockFallback};
use mentalese_core::worlds::WorldModel;
use serde::{Deserialize, Serialize};

pub type SharedBackend = Arc<dyn Backend + Send + Sync>;

static OUTBOUND_CALLS: AtomicU64 = AtomicU64::new(0);

/// Requests the live backend has attempted in this process.
pub fn outbound_calls() -> u64 {
    OUTBOUND_CALLS.load(Ordering::SeqCst)
}

pub const ENV_BACKEND: &str = "MENTALESE_BACKEND";
pub const ENV_BASE_URL: &str = "MENTALESE_BASE_URL";
pub const ENV_MODEL: &str = "MENTALESE_MODEL";
pub const ENV_API_KEY: &str = "MENTALESE_API_KEY";
pub const ENV_TIMEOUT: &str = "MENTALESE_TIMEOUT_SECS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub model: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: Option<u64>,
    /// Extra fixture files for the mock, read in order after the world's
    /// bundled fixtures.
    #[serde(default)]
    pub fixture_files: Vec<std::path::PathBuf>,
}

impl BackendConfig {
    /// Reads the `MENTALESE_*` variables; unset variables keep defaults.
    pub fn from_env() -> Result<Self, BackendError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, BackendError> {
        let config_err = |message: String| BackendError { kind: BackendErrorKind::Config, message };
        let kind = match get(ENV_BACKEND).as_deref() {
            None | Some("") | Some("mock") => BackendKind::Mock,
            Some("http") => BackendKind::Http,
            Some(other) => return Err(config_err(format!("{} must be `mock` or `http`, got `{}`", ENV_BACKEND, other))),
        };
        let timeout_secs = match get(ENV_TIMEOUT) {
            Some(t) => Some(t.trim().parse().map_err(|_| config_err(format!("{} must be a whole number of seconds", ENV_TIMEOUT)))?),
            None => None,
        };
        Ok(BackendConfig { kind, base_url: get(ENV_BASE_URL), model: get(ENV_MODEL), api_key: get(ENV_API_KEY), timeout_secs, fixture_files: Vec::new() })
    }

    /// Builds the backend for a session over `world`.
    pub fn build(&self, world: &WorldModel) -> Result<SharedBackend, BackendError> {
        match self.kind {
            BackendKind::Mock => {
                let config_err = |message: String| BackendError { kind: BackendErrorKind::Config, message };
                let mut mock = MockBackend::from_fixtures(world.fixtures).map_err(|e| config_err(format!("bundled fixtures for `{}`: {}", world.id, e)))?;
                for path in &self.fixture_files {
                    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {}", path.display(), e)))?;
                    mock.add_fixtures(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e)))?;
                }
                Ok(Arc::new(mock.with_fallback(MockFallback::EchoError)))
            }
            BackendKind::Http => Ok(Arc::new(HttpBackend::new(self)?)),
        }
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    max_tokens: u32,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    n: usize,
    temperature: f64,
    stop: &'a [&'a str],
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    score: Option<f64>,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let config_err = |message: &str| BackendError { kind: BackendErrorKind::Config, message: message.to_string() };
        let base = config.base_url.as_deref().filter(|u| !u.is_empty()).ok_or_else(|| config_err("MENTALESE_BASE_URL is not set"))?;
        let model = config.model.clone().filter(|m| !m.is_empty()).ok_or_else(|| config_err("MENTALESE_MODEL is not set"))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.unwrap_or(60))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend { agent, url: format!("{}/completions", base.trim_end_matches('/')), model, api_key: config.api_key.clone(), max_tokens: 512 })
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, prompt: &str, n: usize, temperature: f64, stop: &[&str]) -> Result<Vec<Completion>, BackendError> {
        OUTBOUND_CALLS.fetch_add(1, Ordering::SeqCst);
        let body = CompletionRequest { model: &self.model, prompt, n, temperature, stop, max_tokens: self.max_tokens };
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {}", key));
        }
        let mut response = request.send_json(&body).map_err(|e| BackendError { kind: BackendErrorKind::Transport, message: e.to_string() })?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError { kind: BackendErrorKind::Auth, message: format!("endpoint answered {}", status) });
        }
        if !status.is_success() {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError { kind: BackendErrorKind::Status, message: format!("endpoint answered {}: {}", status, text.chars().take(200).collect::<String>()) });
        }
        let parsed: CompletionResponse = response.body_mut().read_json().map_err(|e| BackendError { kind: BackendErrorKind::Malformed, message: e.to_string() })?;
        Ok(parsed.choices.into_iter().map(|c| Completion { text: c.text, score: c.score }).collect())
    }
}
