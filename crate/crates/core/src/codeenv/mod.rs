//! The CSV coding environment.
//!
//! An agent must answer a query about a file whose dialect it does not know.
//! `UNIT_TESTS` reveal individual attributes at a cost of `d_u` each; `CODE`
//! runs a read with a chosen dialect at a cost of `d_c` and prints the query
//! result or the parse error; `ANSWER` commits. The reward is
//! `correct * d_u^U * d_c^C`.

pub mod belief;
pub mod oracle;
pub mod policies;

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::episode::{
    powu, ActionKind, CoreError, EnvAction, EnvError, EnvKind, Environment, Observation, Outcome,
    Step, LABEL_ANSWER, LABEL_CODE, LABEL_UNIT_TESTS,
};
use crate::filereading::{
    answers_match, evaluate_query, parse_csv, Attribute, FileReadingInstance, FormatPrior,
    FormatTriple, QuerySpec,
};

pub use belief::CodeBeliefSet;
pub use oracle::{oracle_value, CodeOracle};
pub use policies::{
    belief_from_history, exact_expected_reward, map_greedy_expected_reward, CodeFirst, MapGreedy,
    OracleCodePolicy, TestsThenCode,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CodeAction {
    UnitTests(Vec<Attribute>),
    Code(FormatTriple),
    Answer(String),
}

impl EnvAction for CodeAction {
    fn kind(&self) -> ActionKind {
        match self {
            CodeAction::Answer(_) => ActionKind::Commit,
            _ => ActionKind::Explore,
        }
    }

    fn label(&self) -> String {
        match self {
            CodeAction::UnitTests(_) => LABEL_UNIT_TESTS.into(),
            CodeAction::Code(_) => LABEL_CODE.into(),
            CodeAction::Answer(_) => LABEL_ANSWER.into(),
        }
    }

    fn payload(&self) -> Value {
        match self {
            CodeAction::UnitTests(tests) => {
                json!({ "tests": tests.iter().map(|a| a.param_name()).collect::<Vec<_>>() })
            }
            CodeAction::Code(z) => json!({
                "delimiter": z.delimiter.ch().to_string(),
                "quotechar": z.quote.ch().to_string(),
                "skiprows": z.skiprows,
            }),
            CodeAction::Answer(text) => json!({ "answer": text }),
        }
    }
}

/// Where code attempts are executed.
#[derive(Debug, Clone, PartialEq)]
pub enum CodeBackend {
    /// Parse the real file bytes.
    Csv(Vec<u8>),
    /// Only the latent triple matters: the true triple prints the gold
    /// answer, any other fails.
    Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeTask {
    pub task_id: String,
    pub seed: u64,
    pub filename: String,
    pub query: QuerySpec,
    pub gold_answer: String,
    pub true_format: FormatTriple,
    pub d_u: f64,
    pub d_c: f64,
    pub rho: f64,
    /// Format likelihoods shown to agents and used by belief-based policies.
    pub prior: Option<FormatPrior>,
    pub backend: CodeBackend,
}

impl CodeTask {
    pub fn from_instance(inst: &FileReadingInstance, prior: Option<FormatPrior>) -> Self {
        CodeTask {
            task_id: inst.task_id.clone(),
            seed: inst.seed,
            filename: inst.filename.clone(),
            query: inst.query.clone(),
            gold_answer: inst.gold_answer.clone(),
            true_format: inst.true_format,
            d_u: inst.d_u,
            d_c: inst.d_c,
            rho: inst.rho,
            prior,
            backend: CodeBackend::Csv(inst.csv_bytes.clone()),
        }
    }
}

/// What a code agent sees.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeContext {
    pub task_id: String,
    pub filename: String,
    pub task_description: String,
    pub d_u: f64,
    pub d_c: f64,
    pub rho: f64,
    pub prior: Option<FormatPrior>,
    /// Starting belief for belief-based policies (uniform without a prior).
    pub initial_belief: CodeBeliefSet,
}

pub fn unit_test_line(attr: Attribute, value_repr: &str) -> String {
    format!("test_{} → {value_repr}", attr.param_name())
}

pub fn execution_text(stdout: &str, stderr: &str) -> String {
    format!("stdout:\n{stdout}\nstderr:\n{stderr}")
}

pub struct CodeEnv {
    task: CodeTask,
    context: CodeContext,
    unit_tests: usize,
    code_attempts: usize,
    done: bool,
}

impl CodeEnv {
    pub fn new(task: CodeTask) -> Result<Self, CoreError> {
        let belief = match &task.prior {
            Some(p) => CodeBeliefSet::from_prior(p),
            None => CodeBeliefSet::from_weights([1.0; FormatTriple::COUNT]),
        };
        Self::with_belief(task, belief)
    }

    pub fn with_belief(task: CodeTask, initial_belief: CodeBeliefSet) -> Result<Self, CoreError> {
        crate::episode::CostModel::CodeDiscounts {
            d_u: task.d_u,
            d_c: task.d_c,
        }
        .validate()?;
        if let Some(p) = &task.prior {
            p.validate()?;
        }
        let context = CodeContext {
            task_id: task.task_id.clone(),
            filename: task.filename.clone(),
            task_description: task.query.describe(),
            d_u: task.d_u,
            d_c: task.d_c,
            rho: task.rho,
            prior: task.prior.clone(),
            initial_belief,
        };
        Ok(CodeEnv {
            task,
            context,
            unit_tests: 0,
            code_attempts: 0,
            done: false,
        })
    }

    pub fn usage(&self) -> (usize, usize) {
        (self.unit_tests, self.code_attempts)
    }

    fn run_code(&self, z: FormatTriple) -> (bool, String, String) {
        match &self.task.backend {
            CodeBackend::Latent => {
                if z == self.task.true_format {
                    (true, self.task.gold_answer.clone(), String::new())
                } else {
                    (
                        false,
                        String::new(),
                        "ParserError: the file could not be read with these options".into(),
                    )
                }
            }
            CodeBackend::Csv(bytes) => match parse_csv(bytes, z) {
                Err(e) => (false, String::new(), format!("ParserError: {e}")),
                Ok(table) => match evaluate_query(&table, &self.task.query) {
                    Err(e) => (false, String::new(), format!("QueryError: {e}")),
                    Ok(out) => (z == self.task.true_format, out, String::new()),
                },
            },
        }
    }
}

impl Environment for CodeEnv {
    type Action = CodeAction;
    type Context = CodeContext;

    fn kind(&self) -> EnvKind {
        EnvKind::Code
    }

    fn task_id(&self) -> &str {
        &self.task.task_id
    }

    fn seed(&self) -> u64 {
        self.task.seed
    }

    fn context(&self) -> &CodeContext {
        &self.context
    }

    fn step(&mut self, action: &CodeAction) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        match action {
            CodeAction::UnitTests(tests) => {
                if tests.is_empty() {
                    return Err(EnvError::Protocol(
                        "UNIT_TESTS needs at least one test".into(),
                    ));
                }
                let mut seen = Vec::new();
                for t in tests {
                    if seen.contains(t) {
                        return Err(EnvError::Protocol(format!(
                            "duplicate unit test {}",
                            t.param_name()
                        )));
                    }
                    seen.push(*t);
                }
                self.unit_tests += tests.len();
                let z = self.task.true_format;
                let text = tests
                    .iter()
                    .map(|&a| unit_test_line(a, &z.repr(a)))
                    .collect::<Vec<_>>()
                    .join("\n");
                let results: Vec<Value> = tests
                    .iter()
                    .map(|&a| json!({ "attribute": a.param_name(), "value": z.value(a), "repr": z.repr(a) }))
                    .collect();
                Ok(Step::Observe(Observation {
                    text,
                    structured: json!({ "results": results }),
                }))
            }
            CodeAction::Code(z) => {
                self.code_attempts += 1;
                let (success, stdout, stderr) = self.run_code(*z);
                Ok(Step::Observe(Observation {
                    text: execution_text(&stdout, &stderr),
                    structured: json!({
                        "triple": z.index(),
                        "success": success,
                        "stdout": stdout,
                        "stderr": stderr,
                    }),
                }))
            }
            CodeAction::Answer(text) => {
                self.done = true;
                Ok(Step::Done(Outcome {
                    answer: text.clone(),
                    correct: answers_match(text, &self.task.gold_answer),
                    discount: self.discount_so_far(),
                }))
            }
        }
    }

    fn discount_so_far(&self) -> f64 {
        powu(self.task.d_u, self.unit_tests) * powu(self.task.d_c, self.code_attempts)
    }

    fn meta(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("d_u".to_string(), json!(self.task.d_u)),
            ("d_c".to_string(), json!(self.task.d_c)),
            ("rho".to_string(), json!(self.task.rho)),
            (
                "true_format".to_string(),
                json!(self.task.true_format.index()),
            ),
        ])
    }
}
