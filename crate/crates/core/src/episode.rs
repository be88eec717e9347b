//! Environment-agnostic episode machinery.
//!
//! An environment exposes a typed action space and a [`Step`] function; a
//! [`Policy`] picks the next action from the task context and the history of
//! `(action, observation)` turns. [`run_episode`] drives the loop and produces
//! an [`EpisodeTrace`], the unit of persistence and scoring.
//!
//! The timestep convention is shared by all environments: only exploration
//! actions discount the reward; the commit itself is free.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const TRACE_SCHEMA: &str = "trace/v1";

/// Label of the commit the runner appends when an episode is cut off.
pub const FORCED_COMMIT_LABEL: &str = "FORCED_COMMIT";

pub const LABEL_UNIT_TESTS: &str = "UNIT_TESTS";
pub const LABEL_CODE: &str = "CODE";
pub const LABEL_ANSWER: &str = "ANSWER";
pub const LABEL_RETRIEVE: &str = "RETRIEVE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pandora,
    Qa,
    Code,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Pandora => "pandora",
            EnvKind::Qa => "qa",
            EnvKind::Code => "code",
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pandora" => Ok(EnvKind::Pandora),
            "qa" => Ok(EnvKind::Qa),
            "code" | "filereading" => Ok(EnvKind::Code),
            other => Err(format!("unknown environment kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Explore,
    Commit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step_index: usize,
    pub kind: ActionKind,
    pub label: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub step_index: usize,
    pub text: String,
    pub structured: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    /// The policy committed on its own.
    Committed,
    /// The step cap was reached; an empty answer was committed.
    StepCap,
    /// The policy emitted a malformed or illegal action.
    ProtocolViolation,
    /// The policy could not produce an action (e.g. transport failure).
    Errored,
}

/// One message of a logged agent conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub schema: String,
    pub task_id: String,
    pub env: EnvKind,
    pub seed: u64,
    pub policy_name: String,
    pub actions: Vec<ActionRecord>,
    pub observations: Vec<ObservationRecord>,
    pub final_answer: String,
    pub correctness: u8,
    pub discount_applied: f64,
    pub reward: f64,
    pub status: EpisodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
    /// Environment parameters needed by reports (gamma, rho, k_hat, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<ChatTurn>,
}

impl EpisodeTrace {
    pub fn is_correct(&self) -> bool {
        self.correctness == 1
    }

    pub fn explore_labels(&self) -> impl Iterator<Item = &str> {
        self.actions
            .iter()
            .filter(|a| a.kind == ActionKind::Explore)
            .map(|a| a.label.as_str())
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(Value::as_f64)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serialization is infallible")
    }
}

/// Multiplicative cost of exploration, one variant per environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum CostModel {
    PandoraGamma { gamma: f64 },
    QaGamma { gamma: f64 },
    CodeDiscounts { d_u: f64, d_c: f64 },
}

impl CostModel {
    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = match *self {
            CostModel::PandoraGamma { gamma } | CostModel::QaGamma { gamma } => {
                (0.0..=1.0).contains(&gamma)
            }
            CostModel::CodeDiscounts { d_u, d_c } => {
                d_u > 0.0 && d_u <= 1.0 && d_c > 0.0 && d_c <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument(format!(
                "cost factors out of range: {self:?}"
            )))
        }
    }

    pub fn env(&self) -> EnvKind {
        match self {
            CostModel::PandoraGamma { .. } => EnvKind::Pandora,
            CostModel::QaGamma { .. } => EnvKind::Qa,
            CostModel::CodeDiscounts { .. } => EnvKind::Code,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// An action understood by some environment.
pub trait EnvAction: Clone {
    fn kind(&self) -> ActionKind;
    /// Short canonical label, e.g. `VERIFY A` or `UNIT_TESTS`.
    fn label(&self) -> String;
    fn payload(&self) -> Value {
        Value::Null
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub text: String,
    pub structured: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub answer: String,
    pub correct: bool,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Observe(Observation),
    Done(Outcome),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    /// The action is not legal in the current state.
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("episode already terminated")]
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn<A> {
    pub action: A,
    pub observation: Observation,
}

pub trait Environment {
    type Action: EnvAction;
    /// What the agent is allowed to see about the task.
    type Context;

    fn kind(&self) -> EnvKind;
    fn task_id(&self) -> &str;
    fn seed(&self) -> u64;
    fn context(&self) -> &Self::Context;
    fn step(&mut self, action: &Self::Action) -> Result<Step, EnvError>;
    /// Discount accrued by the exploration taken so far.
    fn discount_so_far(&self) -> f64;
    fn meta(&self) -> BTreeMap<String, Value> {
        BTreeMap::new()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("malformed action: {0}")]
    Malformed(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

/// Chooses the next action. Implementations must be deterministic given the
/// context, the history and their own seed.
pub trait Policy<E: Environment> {
    fn name(&self) -> String;
    fn next_action(
        &mut self,
        context: &E::Context,
        history: &[Turn<E::Action>],
    ) -> Result<E::Action, PolicyError>;
    /// Conversation log, for policies backed by a chat model.
    fn transcript(&self) -> Vec<ChatTurn> {
        Vec::new()
    }
}

/// Runs one episode to completion.
///
/// The episode ends when the policy commits, when `max_steps` actions have been
/// taken, or when the policy misbehaves. In the last two cases an empty
/// [`FORCED_COMMIT_LABEL`] commit is appended and the episode scores zero.
pub fn run_episode<E, P>(
    env: &mut E,
    policy: &mut P,
    max_steps: usize,
) -> Result<EpisodeTrace, CoreError>
where
    E: Environment,
    P: Policy<E> + ?Sized,
{
    if max_steps == 0 {
        return Err(CoreError::InvalidArgument(
            "max_steps must be at least 1".into(),
        ));
    }
    let mut history: Vec<Turn<E::Action>> = Vec::new();
    let mut actions = Vec::new();
    let mut observations = Vec::new();

    let finish = |actions: Vec<ActionRecord>,
                  observations: Vec<ObservationRecord>,
                  status: EpisodeStatus,
                  violation: Option<String>,
                  outcome: Outcome,
                  env: &E,
                  policy: &P| {
        let correctness = u8::from(outcome.correct);
        EpisodeTrace {
            schema: TRACE_SCHEMA.to_string(),
            task_id: env.task_id().to_string(),
            env: env.kind(),
            seed: env.seed(),
            policy_name: policy.name(),
            actions,
            observations,
            final_answer: outcome.answer,
            correctness,
            discount_applied: outcome.discount,
            reward: f64::from(correctness) * outcome.discount,
            status,
            violation,
            meta: env.meta(),
            transcript: policy.transcript(),
        }
    };

    let forced = |actions: &mut Vec<ActionRecord>, env: &E| {
        actions.push(ActionRecord {
            step_index: actions.len(),
            kind: ActionKind::Commit,
            label: FORCED_COMMIT_LABEL.to_string(),
            payload: Value::Null,
        });
        Outcome {
            answer: String::new(),
            correct: false,
            discount: env.discount_so_far(),
        }
    };

    for _ in 0..max_steps {
        let action = match policy.next_action(env.context(), &history) {
            Ok(a) => a,
            Err(err) => {
                let status = match err {
                    PolicyError::Malformed(_) => EpisodeStatus::ProtocolViolation,
                    PolicyError::Transport(_) => EpisodeStatus::Errored,
                };
                let outcome = forced(&mut actions, env);
                return Ok(finish(
                    actions,
                    observations,
                    status,
                    Some(err.to_string()),
                    outcome,
                    env,
                    policy,
                ));
            }
        };
        let record = ActionRecord {
            step_index: actions.len(),
            kind: action.kind(),
            label: action.label(),
            payload: action.payload(),
        };
        match env.step(&action) {
            Ok(Step::Observe(obs)) if record.kind == ActionKind::Explore => {
                observations.push(ObservationRecord {
                    step_index: record.step_index,
                    text: obs.text.clone(),
                    structured: obs.structured.clone(),
                });
                actions.push(record);
                history.push(Turn {
                    action,
                    observation: obs,
                });
            }
            Ok(Step::Done(outcome)) if record.kind == ActionKind::Commit => {
                actions.push(record);
                return Ok(finish(
                    actions,
                    observations,
                    EpisodeStatus::Committed,
                    None,
                    outcome,
                    env,
                    policy,
                ));
            }
            Ok(_) => {
                return Err(CoreError::Contract(format!(
                    "environment step result disagrees with action kind of '{}'",
                    record.label
                )))
            }
            Err(EnvError::Protocol(msg)) => {
                let outcome = forced(&mut actions, env);
                let msg = format!("{}: {msg}", record.label);
                return Ok(finish(
                    actions,
                    observations,
                    EpisodeStatus::ProtocolViolation,
                    Some(msg),
                    outcome,
                    env,
                    policy,
                ));
            }
            Err(EnvError::Terminated) => {
                return Err(CoreError::Contract(
                    "environment stepped after termination".into(),
                ))
            }
        }
    }
    let outcome = forced(&mut actions, env);
    Ok(finish(
        actions,
        observations,
        EpisodeStatus::StepCap,
        None,
        outcome,
        env,
        policy,
    ))
}

/// Runs one episode per task in parallel. `make` builds a fresh environment
/// and policy for a task; it must derive all randomness from the task itself.
/// Traces come back sorted by task id.
pub fn run_batch<T, E, P, F>(
    tasks: &[T],
    make: F,
    max_steps: usize,
) -> Result<Vec<EpisodeTrace>, CoreError>
where
    T: Sync,
    E: Environment,
    P: Policy<E>,
    F: Fn(&T) -> (E, P) + Sync,
{
    let mut traces = tasks
        .par_iter()
        .map(|task| {
            let (mut env, mut policy) = make(task);
            run_episode(&mut env, &mut policy, max_steps)
        })
        .collect::<Result<Vec<_>, _>>()?;
    traces.sort_by(|a, b| {
        a.task_id
            .cmp(&b.task_id)
            .then_with(|| a.policy_name.cmp(&b.policy_name))
    });
    Ok(traces)
}

/// Exploration counts of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreCounts {
    pub explore: usize,
    pub unit_tests: usize,
    pub code: usize,
    pub retrieve: usize,
}

pub fn explore_counts(trace: &EpisodeTrace) -> ExploreCounts {
    let mut counts = ExploreCounts::default();
    for action in trace
        .actions
        .iter()
        .filter(|a| a.kind == ActionKind::Explore)
    {
        counts.explore += 1;
        match action.label.as_str() {
            LABEL_UNIT_TESTS => {
                counts.unit_tests += action
                    .payload
                    .get("tests")
                    .and_then(Value::as_array)
                    .map_or(1, Vec::len)
            }
            LABEL_CODE => counts.code += 1,
            LABEL_RETRIEVE => counts.retrieve += 1,
            _ => {}
        }
    }
    counts
}

/// Discounted reward of a complete trace under `cost`, recomputed from the
/// recorded actions.
pub fn discounted_reward(trace: &EpisodeTrace, cost: &CostModel) -> Result<f64, CoreError> {
    cost.validate()?;
    if cost.env() != trace.env {
        return Err(CoreError::Contract(format!(
            "cost model for {} applied to a {} trace",
            cost.env(),
            trace.env
        )));
    }
    if trace.actions.last().map(|a| a.kind) != Some(ActionKind::Commit) {
        return Err(CoreError::Contract(
            "trace does not end with a commit".into(),
        ));
    }
    let counts = explore_counts(trace);
    let discount = match *cost {
        CostModel::PandoraGamma { gamma } | CostModel::QaGamma { gamma } => {
            powu(gamma, counts.explore)
        }
        CostModel::CodeDiscounts { d_u, d_c } => {
            powu(d_u, counts.unit_tests) * powu(d_c, counts.code)
        }
    };
    Ok(f64::from(trace.correctness) * discount)
}

pub(crate) fn powu(base: f64, exp: usize) -> f64 {
    base.powi(i32::try_from(exp).unwrap_or(i32::MAX))
}

/// Code-environment trace shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPattern {
    /// Code attempts without any unit test.
    GuessAndGo,
    /// All unit tests happen before the first code attempt.
    TestsThenCode,
    /// At least one unit test follows a code attempt.
    Interleaved,
    /// No code attempt at all.
    AnswerOnly,
}

impl ActionPattern {
    pub const ALL: [ActionPattern; 4] = [
        ActionPattern::GuessAndGo,
        ActionPattern::TestsThenCode,
        ActionPattern::Interleaved,
        ActionPattern::AnswerOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionPattern::GuessAndGo => "guess_and_go",
            ActionPattern::TestsThenCode => "tests_then_code",
            ActionPattern::Interleaved => "interleaved",
            ActionPattern::AnswerOnly => "answer_only",
        }
    }
}

pub fn classify_action_pattern(trace: &EpisodeTrace) -> Result<ActionPattern, CoreError> {
    if trace.env != EnvKind::Code {
        return Err(CoreError::Contract(format!(
            "pattern classification needs a code trace, got {}",
            trace.env
        )));
    }
    let labels: Vec<&str> = trace.explore_labels().collect();
    let first_code = labels.iter().position(|l| *l == LABEL_CODE);
    let any_test = labels.iter().any(|l| *l == LABEL_UNIT_TESTS);
    Ok(match first_code {
        None => ActionPattern::AnswerOnly,
        Some(_) if !any_test => ActionPattern::GuessAndGo,
        Some(first) => {
            let test_after_code = labels[first..].iter().any(|l| *l == LABEL_UNIT_TESTS);
            if test_after_code {
                ActionPattern::Interleaved
            } else {
                ActionPattern::TestsThenCode
            }
        }
    })
}

/// Whether the first code attempt precedes every unit test (the
/// "guess-and-go" share reported per cost regime).
pub fn codes_before_testing(trace: &EpisodeTrace) -> bool {
    let labels: Vec<&str> = trace.explore_labels().collect();
    match labels.iter().position(|l| *l == LABEL_CODE) {
        Some(first) => !labels[..first].contains(&LABEL_UNIT_TESTS),
        None => false,
    }
}
