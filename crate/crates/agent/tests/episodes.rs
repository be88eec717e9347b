//! Chat policies driven by scripted backends through full episodes.

use std::sync::Arc;

use cta_agent::config::AgentConfig;
use cta_agent::prompts::reminder;
use cta_agent::{ChatBackend, ClientError, FnChat, LlmCodePolicy, LlmPandoraPolicy, LlmQaPolicy, ScriptedChat};
use cta_core::codeenv::{CodeBackend, CodeEnv, CodeTask};
use cta_core::filereading::{Delimiter, FormatTriple, QueryOp, QuerySpec, QuoteChar};
use cta_core::pandora::{PandoraEnv, PandoraInstance};
use cta_core::qa::{QaEnv, QaTask};
use cta_core::{run_episode, EnvKind, EpisodeStatus, EpisodeTrace, DEFAULT_MAX_STEPS};

fn pandora_env() -> PandoraEnv {
    PandoraEnv::new(PandoraInstance::new("case", vec![0.04, 0.68, 0.28], 0.2, 3, 1).unwrap()).unwrap()
}

fn run_pandora(backend: Arc<dyn ChatBackend>, config: &AgentConfig) -> EpisodeTrace {
    let mut policy = LlmPandoraPolicy::new(config, backend);
    run_episode(&mut pandora_env(), &mut policy, DEFAULT_MAX_STEPS).unwrap()
}

#[test]
fn verify_everything_trace() {
    let cfg = AgentConfig { cta: true, thinking: cta_agent::ThinkingMode::Disabled, ..Default::default() };
    let chat = Arc::new(ScriptedChat::new(["VERIFY A", "VERIFY B", "GUESS C"]));
    let trace = run_pandora(chat.clone(), &cfg);
    assert_eq!(trace.policy_name, "cta_prompted_nt");
    assert_eq!(trace.status, EpisodeStatus::Committed);
    assert_eq!(trace.correctness, 1);
    assert!((trace.reward - 0.04).abs() < 1e-12);
    let users: Vec<&str> = trace.transcript.iter().filter(|t| t.role == "user").map(|t| t.content.as_str()).collect();
    assert_eq!(
        users[1],
        "The verification result is: NO, A is incorrect. Given this, please provide your next action."
    );
    assert_eq!(users[2], "The verification result is: NO, B is incorrect. Given this, please provide your next action.");
    // Each request carries the whole conversation so far.
    let requests = chat.requests();
    assert_eq!(requests.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 4, 6]);
}

#[test]
fn one_reminder_then_success() {
    let chat = Arc::new(ScriptedChat::new(["I think B.", "GUESS B"]));
    let trace = run_pandora(chat, &AgentConfig::default());
    assert_eq!(trace.status, EpisodeStatus::Committed);
    assert_eq!(trace.correctness, 0);
    assert!(trace.transcript.iter().any(|t| t.role == "user" && t.content == reminder(EnvKind::Pandora)));
}

#[test]
fn two_bad_replies_are_a_protocol_violation() {
    let chat = Arc::new(ScriptedChat::new(["hmm", "GUESS Z"]));
    let trace = run_pandora(chat, &AgentConfig::default());
    assert_eq!(trace.status, EpisodeStatus::ProtocolViolation);
    assert_eq!(trace.reward, 0.0);
    assert_eq!(trace.actions.last().unwrap().label, cta_core::episode::FORCED_COMMIT_LABEL);
}

#[test]
fn transport_failure_marks_episode_errored() {
    let chat: Arc<dyn ChatBackend> = Arc::new(FnChat(|_: &[cta_core::ChatTurn]| {
        Err(ClientError::RetriesExhausted { attempts: 3, last: "timed out".into() })
    }));
    let trace = run_pandora(chat, &AgentConfig::default());
    assert_eq!(trace.status, EpisodeStatus::Errored);
    assert_eq!(trace.reward, 0.0);
}

#[test]
fn replaying_a_transcript_reproduces_the_trace() {
    let script = ["<think>\nB is likely.\n</think>\n\nVERIFY B", "GUESS C"];
    let first = run_pandora(Arc::new(ScriptedChat::new(script)), &AgentConfig::default());
    let replay = run_pandora(Arc::new(ScriptedChat::replay(&first.transcript)), &AgentConfig::default());
    assert_eq!(first, replay);
    assert_eq!(first.to_json_line(), replay.to_json_line());
}

fn qa_task() -> QaTask {
    QaTask {
        task_id: "q1".into(),
        question: "Who wrote the novel Dracula?".into(),
        gold_answer: "Bram Stoker".into(),
        gamma: 0.5,
        p_ret: 0.578,
        k_da: None,
        verbalized: None,
        k_hat: Some(0.3),
        context: Some("Dracula is an 1897 novel by Bram Stoker.".into()),
        seed: 3,
    }
}

#[test]
fn qa_retrieve_then_answer() {
    let chat = Arc::new(ScriptedChat::new(["RETRIEVE", "ANSWER: Bram Stoker"]));
    let mut policy = LlmQaPolicy::new(&AgentConfig::default(), chat);
    let trace = run_episode(&mut QaEnv::new(qa_task()).unwrap(), &mut policy, DEFAULT_MAX_STEPS).unwrap();
    assert_eq!(trace.correctness, 1);
    assert!((trace.reward - 0.5).abs() < 1e-12);
    let turn2 = &trace.transcript[3];
    assert_eq!(turn2.role, "user");
    assert!(turn2.content.starts_with("TIMESTEP: t=1\nYou have retrieved the following context:\nDracula is"));
    assert!(trace.transcript[1].content.contains("(p_no_context): 0.3\n"));
}

fn code_task() -> CodeTask {
    CodeTask {
        task_id: "fr-00000".into(),
        seed: 0,
        filename: "must_eu.csv".into(),
        query: QuerySpec { op: QueryOp::Max, target_column: "salary".into(), by_column: None },
        gold_answer: "40".into(),
        true_format: FormatTriple::new(Delimiter::Semicolon, QuoteChar::Double, 0),
        d_u: 0.77,
        d_c: 0.77f64.powi(4),
        rho: 4.0,
        prior: None,
        backend: CodeBackend::Csv(b"name;salary\n\"a;b\";30\nc;40\nd;None\n".to_vec()),
    }
}

#[test]
fn code_tests_then_code_then_answer() {
    let code = "```python\nimport pandas as pd\ndf = pd.read_csv('must_eu.csv', delimiter=';')\nprint(df['salary'].max())\n```";
    let chat = Arc::new(ScriptedChat::new([
        r#"UNIT_TESTS: test_delimiter("must_eu.csv"), test_quotechar("must_eu.csv")"#,
        code,
        "ANSWER: 40",
    ]));
    let cfg = AgentConfig { cta: false, ..Default::default() };
    let mut policy = LlmCodePolicy::new(&cfg, chat);
    let trace = run_episode(&mut CodeEnv::new(code_task()).unwrap(), &mut policy, DEFAULT_MAX_STEPS).unwrap();
    assert_eq!(trace.policy_name, "prompted");
    assert_eq!(trace.correctness, 1);
    assert!((trace.reward - 0.77f64.powi(2) * 0.77f64.powi(4)).abs() < 1e-12);
    let users: Vec<&str> = trace.transcript.iter().filter(|t| t.role == "user").map(|t| t.content.as_str()).collect();
    assert_eq!(users[1], "test_delimiter → ';'\ntest_quotechar → '\"'");
    assert_eq!(users[2], "stdout:\n40\nstderr:\n");
}

#[test]
fn code_cta_without_prior_is_reported() {
    let chat = Arc::new(ScriptedChat::new(["ANSWER: 1"]));
    let mut policy = LlmCodePolicy::new(&AgentConfig::default(), chat);
    let trace = run_episode(&mut CodeEnv::new(code_task()).unwrap(), &mut policy, DEFAULT_MAX_STEPS).unwrap();
    assert_eq!(trace.status, EpisodeStatus::ProtocolViolation);
    assert!(trace.violation.unwrap().contains("prompt"));
}
