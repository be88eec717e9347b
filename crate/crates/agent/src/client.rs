//! Chat-completion backends: an HTTP client for OpenAI-compatible servers
//! and scripted backends for tests and offline replay.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;

use serde_json::{json, Value};
use thiserror::Error;

use cta_core::ChatTurn;

use crate::config::{AgentConfig, NoThinkStyle, API_KEY_ENV};
use crate::prompts::request_messages;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("request failed after {attempts} attempt(s): {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Decode(String),
    #[error("scripted backend has no reply left")]
    ScriptExhausted,
}

/// Anything that turns a conversation into the next assistant reply.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatTurn]) -> Result<String, ClientError>;
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Request body for `/v1/chat/completions`.
pub fn request_body(config: &AgentConfig, messages: &[ChatTurn]) -> Value {
    let sent = request_messages(messages, config);
    let prefixed = sent.len() > messages.len();
    let mut body = json!({
        "model": config.model,
        "messages": sent,
        "temperature": config.temperature,
    });
    let obj = body.as_object_mut().expect("object literal");
    if let Some(n) = config.max_tokens {
        obj.insert("max_tokens".into(), json!(n));
    }
    if prefixed {
        obj.insert("continue_final_message".into(), json!(true));
        obj.insert("add_generation_prompt".into(), json!(false));
    }
    if config.no_think_style == NoThinkStyle::ChatTemplateFlag {
        obj.insert("chat_template_kwargs".into(), json!({ "enable_thinking": !config.thinking_disabled() }));
    }
    body
}

/// Assistant text from a completion response. Reasoning returned in a
/// separate field is folded back in as a leading think block.
pub fn reply_text(response: &Value) -> Result<String, ClientError> {
    let message = response
        .pointer("/choices/0/message")
        .ok_or_else(|| ClientError::Decode("missing choices[0].message".into()))?;
    let content = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(ClientError::Decode(format!("content is not a string: {other}"))),
    };
    match message.get("reasoning_content").and_then(Value::as_str) {
        Some(r) if !r.is_empty() => Ok(format!("<think>\n{r}\n</think>\n\n{content}")),
        _ => Ok(content),
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

pub struct HttpChatClient {
    config: AgentConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpChatClient {
    /// Reads the API key from [`API_KEY_ENV`] if it is set.
    pub fn new(config: AgentConfig) -> Result<Self, crate::config::ConfigError> {
        config.validate()?;
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(config.max_in_flight);
        Ok(HttpChatClient { config, api_key, agent, gate })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// One HTTP round trip. `Ok(Err(..))` is a failure worth retrying.
    fn attempt(&self, body: &str) -> Result<Result<String, String>, ClientError> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(&self.config.completions_url()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Ok(Err(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Err(e.to_string())),
        };
        if retryable(status) {
            return Ok(Err(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(ClientError::Status { status, body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))?;
        reply_text(&value).map(Ok)
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, messages: &[ChatTurn]) -> Result<String, ClientError> {
        let body = request_body(&self.config, messages).to_string();
        let retry = &self.config.retry;
        let mut last = String::new();
        for attempt in 0..=retry.max_retries {
            if attempt > 0 {
                thread::sleep(retry.backoff(attempt - 1));
            }
            match self.attempt(&body)? {
                Ok(reply) => return Ok(reply),
                Err(e) => last = e,
            }
        }
        Err(ClientError::RetriesExhausted { attempts: retry.max_retries + 1, last })
    }
}

/// Replies from a fixed script, in order. Records every request.
#[derive(Default)]
pub struct ScriptedChat {
    replies: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<Vec<ChatTurn>>>,
}

impl ScriptedChat {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedChat { replies: Mutex::new(replies.into_iter().map(Into::into).collect()), requests: Mutex::default() }
    }

    /// Replays the assistant turns of a logged conversation.
    pub fn replay(transcript: &[ChatTurn]) -> Self {
        Self::new(transcript.iter().filter(|t| t.role == "assistant").map(|t| t.content.clone()))
    }

    pub fn requests(&self) -> Vec<Vec<ChatTurn>> {
        self.requests.lock().expect("requests lock").clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, messages: &[ChatTurn]) -> Result<String, ClientError> {
        self.requests.lock().expect("requests lock").push(messages.to_vec());
        self.replies.lock().expect("replies lock").pop_front().ok_or(ClientError::ScriptExhausted)
    }
}

/// Backend computed from the conversation, e.g. a rule-based stand-in.
pub struct FnChat<F>(pub F);

impl<F> ChatBackend for FnChat<F>
where
    F: Fn(&[ChatTurn]) -> Result<String, ClientError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatTurn]) -> Result<String, ClientError> {
        (self.0)(messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ThinkingMode;

    fn msgs() -> Vec<ChatTurn> {
        vec![ChatTurn { role: "user".into(), content: "hi".into() }]
    }

    #[test]
    fn body_for_prefix_style_nt() {
        let c = AgentConfig { thinking: ThinkingMode::Disabled, ..Default::default() };
        let b = request_body(&c, &msgs());
        assert_eq!(b["messages"][1]["role"], "assistant");
        assert_eq!(b["messages"][1]["content"], "<think>\n\n</think>\n\n");
        assert_eq!(b["continue_final_message"], true);
        assert!(b.get("chat_template_kwargs").is_none());
    }

    #[test]
    fn body_for_flag_style() {
        let c = AgentConfig {
            thinking: ThinkingMode::Disabled,
            no_think_style: NoThinkStyle::ChatTemplateFlag,
            ..Default::default()
        };
        let b = request_body(&c, &msgs());
        assert_eq!(b["messages"].as_array().unwrap().len(), 1);
        assert_eq!(b["chat_template_kwargs"]["enable_thinking"], false);
        assert_eq!(b["temperature"], 0.0);
    }

    #[test]
    fn reasoning_field_becomes_think_block() {
        let v = json!({"choices":[{"message":{"content":"GUESS B","reasoning_content":"hmm"}}]});
        assert_eq!(reply_text(&v).unwrap(), "<think>\nhmm\n</think>\n\nGUESS B");
        assert!(reply_text(&json!({"choices":[]})).is_err());
    }

    #[test]
    fn scripted_runs_out() {
        let s = ScriptedChat::new(["a"]);
        assert_eq!(s.complete(&msgs()).unwrap(), "a");
        assert_eq!(s.complete(&msgs()), Err(ClientError::ScriptExhausted));
        assert_eq!(s.requests().len(), 2);
    }
}
