//! Chat-model agents for the cost-aware exploration environments.
//!
//! - [`prompts`]: system and instruction templates, with and without
//!   estimated priors.
//! - [`parse`]: the reply grammars (`VERIFY`/`GUESS`, `RETRIEVE`/`ANSWER:`,
//!   `UNIT_TESTS:`/code blocks/`ANSWER:`).
//! - [`client`]: an OpenAI-compatible HTTP backend with bounded retries, and
//!   scripted backends for tests and replay.
//! - [`policy`]: [`cta_core::Policy`] implementations driven by a backend.

pub mod client;
pub mod config;
pub mod parse;
pub mod policy;
pub mod prompts;

pub use client::{ChatBackend, ClientError, FnChat, HttpChatClient, ScriptedChat};
pub use config::{AgentConfig, NoThinkStyle, RetryPolicy, ThinkingMode};
pub use parse::{parse_action, render_action, AgentAction, ParseFailure, ParsedAction};
pub use policy::{default_policy_name, LlmCodePolicy, LlmPandoraPolicy, LlmQaPolicy};
pub use prompts::PromptError;
