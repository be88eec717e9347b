//! Agent configuration.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Overrides [`AgentConfig::endpoint`] when set.
pub const ENDPOINT_ENV: &str = "CTA_LLM_ENDPOINT";
/// Bearer token sent with every request when set.
pub const API_KEY_ENV: &str = "CTA_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid agent config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingMode {
    #[default]
    Enabled,
    Disabled,
}

/// How thinking is switched off for models that think by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoThinkStyle {
    /// Seed the assistant turn with an empty `<think></think>` block and ask
    /// the server to continue it.
    #[default]
    AssistantPrefix,
    /// Pass `enable_thinking: false` through `chat_template_kwargs`.
    ChatTemplateFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 4, initial_backoff_ms: 500, max_backoff_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Sleep before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Base URL of an OpenAI-compatible server, without `/v1/...`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub thinking: ThinkingMode,
    pub no_think_style: NoThinkStyle,
    /// Show estimated priors to the model.
    pub cta: bool,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: f64,
    pub max_tokens: Option<u32>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            endpoint: "http://localhost:8000".into(),
            model: "Qwen/Qwen3-8B".into(),
            temperature: 0.0,
            thinking: ThinkingMode::Enabled,
            no_think_style: NoThinkStyle::AssistantPrefix,
            cta: true,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            timeout_secs: 120.0,
            max_tokens: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoint.trim().is_empty() {
            return Err(ConfigError::Invalid("endpoint is empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(ConfigError::Invalid("model is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ConfigError::Invalid(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError::Invalid(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies [`ENDPOINT_ENV`] if it is set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.trim().is_empty() {
                self.endpoint = url;
            }
        }
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.trim_end_matches('/'))
    }

    pub fn thinking_disabled(&self) -> bool {
        self.thinking == ThinkingMode::Disabled
    }
}
