//! Chat-model policies for the three environments.
//!
//! Each policy keeps the conversation for one episode. A reply without a
//! usable action gets one reminder; a second failure ends the episode as a
//! protocol violation. Backend failures end it as errored.

use std::sync::Arc;

use serde_json::Value;

use cta_core::codeenv::{CodeAction, CodeContext, CodeEnv};
use cta_core::pandora::{LabeledAction, PandoraAction, PandoraContext, PandoraEnv};
use cta_core::qa::{QaAction, QaContext, QaEnv};
use cta_core::{ChatTurn, EnvKind, Policy, PolicyError, Turn};

use crate::client::ChatBackend;
use crate::config::AgentConfig;
use crate::parse::{parse_action, AgentAction, ParsedAction};
use crate::prompts::{reminder, render_code, render_pandora, render_qa, render_qa_retrieved, PromptError};

/// Conventional policy name for a configuration: `prompted`,
/// `cta_prompted`, with `_nt` when thinking is disabled.
pub fn default_policy_name(config: &AgentConfig) -> String {
    let base = if config.cta { "cta_prompted" } else { "prompted" };
    if config.thinking_disabled() {
        format!("{base}_nt")
    } else {
        base.to_string()
    }
}

struct Conversation {
    env: EnvKind,
    backend: Arc<dyn ChatBackend>,
    messages: Vec<ChatTurn>,
    /// History turns already relayed to the model.
    relayed: usize,
}

fn prompt_error(e: PromptError) -> PolicyError {
    PolicyError::Malformed(format!("prompt: {e}"))
}

impl Conversation {
    fn new(env: EnvKind, backend: Arc<dyn ChatBackend>) -> Self {
        Conversation { env, backend, messages: Vec::new(), relayed: 0 }
    }

    fn push(&mut self, role: &str, content: String) {
        self.messages.push(ChatTurn { role: role.into(), content });
    }

    /// Asks for an action, converting it with `accept`.
    fn ask<T>(&mut self, mut accept: impl FnMut(&ParsedAction) -> Result<T, String>) -> Result<T, PolicyError> {
        let mut failure = String::new();
        for attempt in 0..2 {
            if attempt > 0 {
                self.push("user", reminder(self.env).to_string());
            }
            let reply = self.backend.complete(&self.messages).map_err(|e| PolicyError::Transport(e.to_string()))?;
            self.push("assistant", reply.clone());
            match parse_action(self.env, &reply).map_err(|e| e.to_string()).and_then(|p| accept(&p)) {
                Ok(action) => return Ok(action),
                Err(e) => failure = e,
            }
        }
        Err(PolicyError::Malformed(failure))
    }
}

fn unexpected(p: &ParsedAction) -> String {
    format!("{:?} is not an action here", p.action)
}

pub struct LlmPandoraPolicy {
    name: String,
    cta: bool,
    conv: Conversation,
}

impl LlmPandoraPolicy {
    pub fn new(config: &AgentConfig, backend: Arc<dyn ChatBackend>) -> Self {
        LlmPandoraPolicy {
            name: default_policy_name(config),
            cta: config.cta,
            conv: Conversation::new(EnvKind::Pandora, backend),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Policy<PandoraEnv> for LlmPandoraPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn next_action(
        &mut self,
        ctx: &PandoraContext,
        history: &[Turn<LabeledAction>],
    ) -> Result<LabeledAction, PolicyError> {
        if self.conv.messages.is_empty() {
            self.conv.messages = render_pandora(ctx, self.cta).map_err(prompt_error)?;
        }
        for turn in &history[self.conv.relayed..] {
            self.conv.push("user", turn.observation.text.clone());
        }
        self.conv.relayed = history.len();
        self.conv.ask(|p| {
            let (label, verify) = match &p.action {
                AgentAction::Verify(l) => (l, true),
                AgentAction::Guess(l) => (l, false),
                _ => return Err(unexpected(p)),
            };
            let i = ctx
                .labels
                .iter()
                .position(|x| x.eq_ignore_ascii_case(label))
                .ok_or_else(|| format!("unknown option {label}"))?;
            Ok(ctx.action(if verify { PandoraAction::Verify(i) } else { PandoraAction::Commit(i) }))
        })
    }

    fn transcript(&self) -> Vec<ChatTurn> {
        self.conv.messages.clone()
    }
}

pub struct LlmQaPolicy {
    name: String,
    cta: bool,
    conv: Conversation,
}

impl LlmQaPolicy {
    pub fn new(config: &AgentConfig, backend: Arc<dyn ChatBackend>) -> Self {
        LlmQaPolicy { name: default_policy_name(config), cta: config.cta, conv: Conversation::new(EnvKind::Qa, backend) }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Policy<QaEnv> for LlmQaPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn next_action(&mut self, ctx: &QaContext, history: &[Turn<QaAction>]) -> Result<QaAction, PolicyError> {
        if self.conv.messages.is_empty() {
            self.conv.messages = render_qa(ctx, self.cta).map_err(prompt_error)?;
        }
        for turn in &history[self.conv.relayed..] {
            let obs = &turn.observation;
            let passage = obs.structured.get("context").and_then(Value::as_str).unwrap_or(&obs.text);
            let text = render_qa_retrieved(ctx, passage).map_err(prompt_error)?;
            self.conv.push("user", text);
        }
        self.conv.relayed = history.len();
        self.conv.ask(|p| match &p.action {
            AgentAction::Retrieve => Ok(QaAction::Retrieve),
            AgentAction::Answer(a) => Ok(QaAction::Answer(a.clone())),
            _ => Err(unexpected(p)),
        })
    }

    fn transcript(&self) -> Vec<ChatTurn> {
        self.conv.messages.clone()
    }
}

pub struct LlmCodePolicy {
    name: String,
    cta: bool,
    conv: Conversation,
}

impl LlmCodePolicy {
    pub fn new(config: &AgentConfig, backend: Arc<dyn ChatBackend>) -> Self {
        LlmCodePolicy {
            name: default_policy_name(config),
            cta: config.cta,
            conv: Conversation::new(EnvKind::Code, backend),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Policy<CodeEnv> for LlmCodePolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn next_action(&mut self, ctx: &CodeContext, history: &[Turn<CodeAction>]) -> Result<CodeAction, PolicyError> {
        if self.conv.messages.is_empty() {
            self.conv.messages = render_code(ctx, self.cta).map_err(prompt_error)?;
        }
        for turn in &history[self.conv.relayed..] {
            self.conv.push("user", turn.observation.text.clone());
        }
        self.conv.relayed = history.len();
        self.conv.ask(|p| match &p.action {
            AgentAction::UnitTests(t) => Ok(CodeAction::UnitTests(t.clone())),
            AgentAction::Code(z) => Ok(CodeAction::Code(*z)),
            AgentAction::Answer(a) => Ok(CodeAction::Answer(a.clone())),
            _ => Err(unexpected(p)),
        })
    }

    fn transcript(&self) -> Vec<ChatTurn> {
        self.conv.messages.clone()
    }
}
