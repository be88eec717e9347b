//! Policy names accepted by `cta run`, per environment.
//!
//! | env     | names                                                              |
//! |---------|--------------------------------------------------------------------|
//! | pandora | `oracle`, `verify_all`, `guess_<i>`, `llm`                        |
//! | qa      | `oracle_threshold`, `never_retrieve`, `always_retrieve`, `llm`    |
//! | code    | `oracle`, `tests_then_code_<k>`, `code_first`, `map_greedy`, `llm` |
//!
//! `llm` traces are named after the agent settings (`prompted`,
//! `cta_prompted`, with an `_nt` suffix when thinking is disabled).

use std::sync::Arc;

use cta_agent::{AgentConfig, ChatBackend, LlmCodePolicy, LlmPandoraPolicy, LlmQaPolicy};
use cta_core::codeenv::{CodeEnv, CodeFirst, MapGreedy, OracleCodePolicy, TestsThenCode};
use cta_core::pandora::{FixedGuessPolicy, OraclePolicy, PandoraEnv, VerifyAllPolicy};
use cta_core::qa::{AlwaysRetrieve, NeverRetrieve, QaEnv, ThresholdPolicy};
use cta_core::{ChatTurn, EnvKind, Environment, Policy, PolicyError, Turn};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySpec {
    PandoraOracle,
    VerifyAll,
    Guess(usize),
    QaThreshold,
    NeverRetrieve,
    AlwaysRetrieve,
    CodeOracle,
    TestsThenCode(usize),
    CodeFirst,
    MapGreedy,
    Llm,
}

impl PolicySpec {
    pub fn parse(env: EnvKind, name: &str) -> Result<Self, CliError> {
        let numbered = |prefix: &str| name.strip_prefix(prefix).and_then(|n| n.parse::<usize>().ok());
        let spec = match (env, name) {
            (_, "llm") => Some(PolicySpec::Llm),
            (EnvKind::Pandora, "oracle") => Some(PolicySpec::PandoraOracle),
            (EnvKind::Pandora, "verify_all") => Some(PolicySpec::VerifyAll),
            (EnvKind::Pandora, _) => numbered("guess_").map(PolicySpec::Guess),
            (EnvKind::Qa, "oracle_threshold") => Some(PolicySpec::QaThreshold),
            (EnvKind::Qa, "never_retrieve") => Some(PolicySpec::NeverRetrieve),
            (EnvKind::Qa, "always_retrieve") => Some(PolicySpec::AlwaysRetrieve),
            (EnvKind::Qa, _) => None,
            (EnvKind::Code, "oracle") => Some(PolicySpec::CodeOracle),
            (EnvKind::Code, "code_first") => Some(PolicySpec::CodeFirst),
            (EnvKind::Code, "map_greedy") => Some(PolicySpec::MapGreedy),
            (EnvKind::Code, _) => numbered("tests_then_code_").map(PolicySpec::TestsThenCode),
        };
        spec.ok_or_else(|| CliError::Argument(format!("unknown {env} policy '{name}'")))
    }
}

/// Chat backend shared by every `llm` episode of a run.
#[derive(Clone)]
pub struct AgentHandle {
    pub config: AgentConfig,
    pub backend: Arc<dyn ChatBackend>,
}

fn need_agent(agent: Option<&AgentHandle>) -> Result<&AgentHandle, CliError> {
    agent.ok_or_else(|| CliError::Config("the llm policy needs an [agent] section".into()))
}

macro_rules! dispatch {
    ($name:ident, $env:ty, { $($variant:ident($ty:ty)),+ $(,)? }) => {
        pub enum $name {
            $($variant($ty)),+
        }

        impl Policy<$env> for $name {
            fn name(&self) -> String {
                match self {
                    $(Self::$variant(p) => Policy::<$env>::name(p)),+
                }
            }

            fn next_action(
                &mut self,
                context: &<$env as Environment>::Context,
                history: &[Turn<<$env as Environment>::Action>],
            ) -> Result<<$env as Environment>::Action, PolicyError> {
                match self {
                    $(Self::$variant(p) => p.next_action(context, history)),+
                }
            }

            fn transcript(&self) -> Vec<ChatTurn> {
                match self {
                    $(Self::$variant(p) => Policy::<$env>::transcript(p)),+
                }
            }
        }
    };
}

dispatch!(PandoraPolicy, PandoraEnv, {
    Oracle(OraclePolicy),
    VerifyAll(VerifyAllPolicy),
    Guess(FixedGuessPolicy),
    Llm(LlmPandoraPolicy),
});

dispatch!(QaPolicy, QaEnv, {
    Threshold(ThresholdPolicy),
    Never(NeverRetrieve),
    Always(AlwaysRetrieve),
    Llm(LlmQaPolicy),
});

dispatch!(CodePolicy, CodeEnv, {
    Oracle(OracleCodePolicy),
    TestsThenCode(TestsThenCode),
    CodeFirst(CodeFirst),
    MapGreedy(MapGreedy),
    Llm(LlmCodePolicy),
});

impl PandoraPolicy {
    pub fn build(spec: PolicySpec, agent: Option<&AgentHandle>) -> Result<Self, CliError> {
        Ok(match spec {
            PolicySpec::PandoraOracle => PandoraPolicy::Oracle(OraclePolicy),
            PolicySpec::VerifyAll => PandoraPolicy::VerifyAll(VerifyAllPolicy),
            PolicySpec::Guess(i) => PandoraPolicy::Guess(FixedGuessPolicy(i)),
            PolicySpec::Llm => {
                let a = need_agent(agent)?;
                PandoraPolicy::Llm(LlmPandoraPolicy::new(&a.config, a.backend.clone()))
            }
            other => return Err(CliError::Argument(format!("{other:?} is not a pandora policy"))),
        })
    }
}

impl QaPolicy {
    pub fn build(spec: PolicySpec, agent: Option<&AgentHandle>) -> Result<Self, CliError> {
        Ok(match spec {
            PolicySpec::QaThreshold => QaPolicy::Threshold(ThresholdPolicy),
            PolicySpec::NeverRetrieve => QaPolicy::Never(NeverRetrieve),
            PolicySpec::AlwaysRetrieve => QaPolicy::Always(AlwaysRetrieve),
            PolicySpec::Llm => {
                let a = need_agent(agent)?;
                QaPolicy::Llm(LlmQaPolicy::new(&a.config, a.backend.clone()))
            }
            other => return Err(CliError::Argument(format!("{other:?} is not a qa policy"))),
        })
    }
}

impl CodePolicy {
    pub fn build(spec: PolicySpec, agent: Option<&AgentHandle>) -> Result<Self, CliError> {
        Ok(match spec {
            PolicySpec::CodeOracle => CodePolicy::Oracle(OracleCodePolicy::new()),
            PolicySpec::TestsThenCode(k) => CodePolicy::TestsThenCode(TestsThenCode { k }),
            PolicySpec::CodeFirst => CodePolicy::CodeFirst(CodeFirst),
            PolicySpec::MapGreedy => CodePolicy::MapGreedy(MapGreedy),
            PolicySpec::Llm => {
                let a = need_agent(agent)?;
                CodePolicy::Llm(LlmCodePolicy::new(&a.config, a.backend.clone()))
            }
            other => return Err(CliError::Argument(format!("{other:?} is not a code policy"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_per_environment() {
        assert_eq!(PolicySpec::parse(EnvKind::Pandora, "guess_2").unwrap(), PolicySpec::Guess(2));
        assert_eq!(
            PolicySpec::parse(EnvKind::Code, "tests_then_code_3").unwrap(),
            PolicySpec::TestsThenCode(3)
        );
        assert_eq!(PolicySpec::parse(EnvKind::Qa, "llm").unwrap(), PolicySpec::Llm);
        assert!(PolicySpec::parse(EnvKind::Qa, "oracle").is_err());
        assert!(PolicySpec::parse(EnvKind::Code, "tests_then_code_x").is_err());
        assert!(PolicySpec::parse(EnvKind::Pandora, "code_first").is_err());
    }

    #[test]
    fn built_policies_keep_their_names() {
        let names = ["oracle", "tests_then_code_2", "code_first", "map_greedy"];
        for name in names {
            let p = CodePolicy::build(PolicySpec::parse(EnvKind::Code, name).unwrap(), None).unwrap();
            assert_eq!(Policy::<CodeEnv>::name(&p), name);
        }
        assert!(CodePolicy::build(PolicySpec::Llm, None).is_err());
    }
}
