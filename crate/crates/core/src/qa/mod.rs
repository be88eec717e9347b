//! Question answering with one optional, discounted retrieval step.
//!
//! Answering directly is correct with probability `k_da`; retrieving first
//! is correct with probability `p_ret` but scales the reward by `gamma`. The
//! optimal rule is therefore a threshold: retrieve iff `p_ret * gamma >= k_da`.

pub mod calibration;
pub mod sim;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::episode::{
    powu, ActionKind, CoreError, EnvAction, EnvError, EnvKind, Environment, EpisodeTrace,
    Observation, Outcome, Policy, PolicyError, Step, Turn, LABEL_ANSWER, LABEL_RETRIEVE,
};
use crate::rng::stream_rng;

pub use calibration::{ece, fit_isotonic, CalibrationModel, ConfidenceField, ConfidenceRecord};

/// Retrievals allowed per episode.
pub const DEFAULT_RETRIEVAL_CAP: usize = 1;

/// Placeholder passage returned by simulated retrieval.
pub const SIMULATED_PASSAGE: &str = "[retrieved passage]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTask {
    pub task_id: String,
    pub question: String,
    pub gold_answer: String,
    pub gamma: f64,
    pub p_ret: f64,
    /// Latent direct-answer accuracy; present for simulated tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_da: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbalized: Option<f64>,
    /// Calibrated estimate of `k_da`, when a calibration model was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hat: Option<f64>,
    /// Retrieved passage for live runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl QaTask {
    pub fn validate(&self) -> Result<(), CoreError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gamma) || !unit(self.p_ret) {
            return Err(CoreError::InvalidArgument(format!(
                "{}: gamma and p_ret must lie in [0,1]",
                self.task_id
            )));
        }
        if [self.k_da, self.verbalized, self.k_hat]
            .iter()
            .flatten()
            .any(|x| !unit(*x))
        {
            return Err(CoreError::InvalidArgument(format!(
                "{}: probabilities must lie in [0,1]",
                self.task_id
            )));
        }
        Ok(())
    }

    /// Uniform draws deciding simulated correctness without and with
    /// retrieval. Shared by every policy evaluated on the task.
    pub fn outcome_draws(&self) -> (f64, f64) {
        let mut rng = stream_rng(self.seed, &format!("{}/outcome", self.task_id));
        (rng.random(), rng.random())
    }

    pub fn is_simulated(&self) -> bool {
        self.k_da.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaDecision {
    Retrieve,
    AnswerDirect,
}

pub fn oracle_decide(k_da: f64, p_ret: f64, gamma: f64) -> QaDecision {
    if p_ret * gamma >= k_da {
        QaDecision::Retrieve
    } else {
        QaDecision::AnswerDirect
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeMode {
    /// Case-insensitive containment of the trimmed gold answer.
    #[default]
    Contains,
    Exact,
}

pub fn grade(reply: &str, gold: &str, mode: GradeMode) -> bool {
    let reply = reply.trim().to_lowercase();
    let gold = gold.trim().to_lowercase();
    if gold.is_empty() {
        return false;
    }
    match mode {
        GradeMode::Contains => reply.contains(&gold),
        GradeMode::Exact => reply == gold,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QaAction {
    Retrieve,
    Answer(String),
}

impl EnvAction for QaAction {
    fn kind(&self) -> ActionKind {
        match self {
            QaAction::Retrieve => ActionKind::Explore,
            QaAction::Answer(_) => ActionKind::Commit,
        }
    }

    fn label(&self) -> String {
        match self {
            QaAction::Retrieve => LABEL_RETRIEVE.into(),
            QaAction::Answer(_) => LABEL_ANSWER.into(),
        }
    }

    fn payload(&self) -> Value {
        match self {
            QaAction::Retrieve => Value::Null,
            QaAction::Answer(text) => json!({ "answer": text }),
        }
    }
}

/// What a QA agent sees.
#[derive(Debug, Clone, PartialEq)]
pub struct QaContext {
    pub task_id: String,
    pub question: String,
    pub gamma: f64,
    pub p_ret: f64,
    /// Calibrated direct-answer success estimate, if available.
    pub p_no_context: Option<f64>,
}

pub struct QaEnv {
    task: QaTask,
    context: QaContext,
    cap: usize,
    grade_mode: GradeMode,
    retrievals: usize,
    done: bool,
}

impl QaEnv {
    pub fn new(task: QaTask) -> Result<Self, CoreError> {
        Self::with_options(task, DEFAULT_RETRIEVAL_CAP, GradeMode::default())
    }

    pub fn with_options(
        task: QaTask,
        cap: usize,
        grade_mode: GradeMode,
    ) -> Result<Self, CoreError> {
        task.validate()?;
        let context = QaContext {
            task_id: task.task_id.clone(),
            question: task.question.clone(),
            gamma: task.gamma,
            p_ret: task.p_ret,
            p_no_context: task.k_hat,
        };
        Ok(QaEnv {
            task,
            context,
            cap,
            grade_mode,
            retrievals: 0,
            done: false,
        })
    }
}

impl Environment for QaEnv {
    type Action = QaAction;
    type Context = QaContext;

    fn kind(&self) -> EnvKind {
        EnvKind::Qa
    }

    fn task_id(&self) -> &str {
        &self.task.task_id
    }

    fn seed(&self) -> u64 {
        self.task.seed
    }

    fn context(&self) -> &QaContext {
        &self.context
    }

    fn step(&mut self, action: &QaAction) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        match action {
            QaAction::Retrieve => {
                if self.retrievals >= self.cap {
                    return Err(EnvError::Protocol(format!(
                        "retrieval cap of {} exceeded",
                        self.cap
                    )));
                }
                self.retrievals += 1;
                let passage = match (&self.task.context, self.task.is_simulated()) {
                    (Some(c), _) => c.clone(),
                    (None, true) => SIMULATED_PASSAGE.to_string(),
                    (None, false) => String::new(),
                };
                Ok(Step::Observe(Observation {
                    structured: json!({ "context": passage }),
                    text: passage,
                }))
            }
            QaAction::Answer(text) => {
                self.done = true;
                let correct = match self.task.k_da {
                    Some(k) => {
                        let (u_direct, u_retrieve) = self.task.outcome_draws();
                        if self.retrievals > 0 {
                            u_retrieve < self.task.p_ret
                        } else {
                            u_direct < k
                        }
                    }
                    None => grade(text, &self.task.gold_answer, self.grade_mode),
                };
                Ok(Step::Done(Outcome {
                    answer: text.clone(),
                    correct,
                    discount: self.discount_so_far(),
                }))
            }
        }
    }

    fn discount_so_far(&self) -> f64 {
        powu(self.task.gamma, self.retrievals)
    }

    fn meta(&self) -> BTreeMap<String, Value> {
        let mut meta = BTreeMap::from([
            ("gamma".to_string(), json!(self.task.gamma)),
            ("p_ret".to_string(), json!(self.task.p_ret)),
        ]);
        for (key, value) in [
            ("k_da", self.task.k_da),
            ("k_hat", self.task.k_hat),
            ("verbalized", self.task.verbalized),
        ] {
            if let Some(v) = value {
                meta.insert(key.to_string(), json!(v));
            }
        }
        meta
    }
}

/// Answer text used by simulated policies; simulated grading ignores it.
const SIM_ANSWER: &str = "simulated answer";

fn answer_or_retrieve(retrieve: bool, history: &[Turn<QaAction>]) -> QaAction {
    if retrieve && history.is_empty() {
        QaAction::Retrieve
    } else {
        QaAction::Answer(SIM_ANSWER.into())
    }
}

/// Retrieves iff `p_ret * gamma >= p_no_context`; without an estimate it
/// never retrieves.
#[derive(Debug, Default, Clone)]
pub struct ThresholdPolicy;

impl Policy<QaEnv> for ThresholdPolicy {
    fn name(&self) -> String {
        "oracle_threshold".into()
    }

    fn next_action(
        &mut self,
        ctx: &QaContext,
        history: &[Turn<QaAction>],
    ) -> Result<QaAction, PolicyError> {
        let retrieve = ctx
            .p_no_context
            .is_some_and(|k| oracle_decide(k, ctx.p_ret, ctx.gamma) == QaDecision::Retrieve);
        Ok(answer_or_retrieve(retrieve, history))
    }
}

#[derive(Debug, Default, Clone)]
pub struct NeverRetrieve;

impl Policy<QaEnv> for NeverRetrieve {
    fn name(&self) -> String {
        "never_retrieve".into()
    }

    fn next_action(
        &mut self,
        _: &QaContext,
        history: &[Turn<QaAction>],
    ) -> Result<QaAction, PolicyError> {
        Ok(answer_or_retrieve(false, history))
    }
}

#[derive(Debug, Default, Clone)]
pub struct AlwaysRetrieve;

impl Policy<QaEnv> for AlwaysRetrieve {
    fn name(&self) -> String {
        "always_retrieve".into()
    }

    fn next_action(
        &mut self,
        _: &QaContext,
        history: &[Turn<QaAction>],
    ) -> Result<QaAction, PolicyError> {
        Ok(answer_or_retrieve(true, history))
    }
}

/// One point of the (gamma, k_hat) decision scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub task_id: String,
    pub policy_name: String,
    pub gamma: f64,
    pub k_hat: f64,
    pub retrieved: bool,
}

/// Scatter rows for QA traces that carry a confidence estimate.
pub fn decision_scatter(traces: &[EpisodeTrace]) -> Vec<DecisionPoint> {
    traces
        .iter()
        .filter(|t| t.env == EnvKind::Qa)
        .filter_map(|t| {
            let gamma = t.meta_f64("gamma")?;
            let k_hat = t.meta_f64("k_hat").or_else(|| t.meta_f64("k_da"))?;
            Some(DecisionPoint {
                task_id: t.task_id.clone(),
                policy_name: t.policy_name.clone(),
                gamma,
                k_hat,
                retrieved: t.explore_labels().any(|l| l == LABEL_RETRIEVE),
            })
        })
        .collect()
}
