//! Prompt templates and rendering.
//!
//! Templates use `{name}` placeholders; braces around anything that is not
//! a lowercase identifier are literal text. Rendering fails if a
//! placeholder has no binding.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use cta_core::codeenv::CodeContext;
use cta_core::filereading::{value_repr, Attribute, FormatPrior};
use cta_core::pandora::PandoraContext;
use cta_core::qa::QaContext;
use cta_core::{ChatTurn, EnvKind};

use crate::config::{AgentConfig, NoThinkStyle};

/// Empty reasoning block that switches a thinking model to direct answers.
pub const THINK_PREFIX: &str = "<think>\n\n</think>\n\n";

pub const PANDORA_SYSTEM: &str = "You are a rational agent tasked with solving sequential decision-making problems under uncertainty. You are given a set of options (bags) with prior probabilities of containing a prize with value 1. You can either VERIFY an option to get information (YES/NO) or GUESS an option to end the game and collect the reward.

- Each VERIFY action consumes one timestep.
- The reward for a correct GUESS is discounted by a factor r^t, where t is the timestep when you GUESS.
- You must balance information gathering (VERIFY) with timely exploitation (GUESS) to maximize expected discounted reward.

Always respond with exactly one action token per step, using the format:
VERIFY <Option> or GUESS <Option>.";

pub const PANDORA_INSTRUCTION: &str = "--- NEW GAME ---
TIMESTEP: t=0

PROBLEM PARAMETERS:
- Bag Labels: {labels_str}
- Prior Probabilities: {priors_str}
- Discount Factor r: {r}

Choose your action.";

pub const QA_SYSTEM: &str = "You are a rational agent tasked with answering factual questions under uncertainty. At each step, you can either directly answer the question or retrieve additional context before answering.

Available actions:
- RETRIEVE: request a related context to consult before deciding your final answer. This consumes one timestep.
- ANSWER: <your short factual answer>, provide your final answer and end the interaction.

Each question comes with your estimated probabilities of answering correctly:
- p_no_context: probability you can answer correctly without retrieving.
- p_with_context: probability you can answer correctly after retrieval.

Your goal is to maximize expected discounted reward:
Reward = r^t * correctness, where t is the timestep when you issue ANSWER and correctness ∈ {0,1}.

Retrieval information:
If you choose RETRIEVE, your expected answer accuracy after retrieval is {p_with_context}.
If you choose not to retrieve, you must rely only on your current knowledge.

Be deliberate — retrieving may improve accuracy but reduces reward due to time discounting. Balance speed and correctness carefully.

Always respond with exactly one action token per step, using the format:
RETRIEVE or ANSWER: <short factual answer>.";

pub const QA_INSTRUCTION: &str = "--- NEW QUESTION ---
TIMESTEP: t=0

Question: {question}
Parameters:
- Discount factor (r): {r}
- Success probability with retrieval (p_with_context): {p_with_context}
- Success probability without retrieval (p_no_context): {p_no_context}

Choose your action:
RETRIEVE or ANSWER: <short factual answer>.";

pub const QA_AFTER_RETRIEVAL: &str = "TIMESTEP: t=1
You have retrieved the following context:
{context}

Question: {question}
Now decide whether to answer:
Respond with:
ANSWER: <short factual answer>";

pub const CODE_SYSTEM: &str = r#"You are an agent tasked with writing code to fulfill an instruction about a CSV file (e.g., answering a question using its contents). Your goal is to produce a correct answer while efficiently using available resources, as measured by discounted reward.

The exact CSV formatting may not be fully known. In practice, you can either proceed using reasonable default assumptions about the format, or run unit tests to verify specific formatting details you are unsure about before committing to a final answer.

Allowed actions (choose exactly ONE per turn):

1) UNIT_TESTS
Run unit tests to debug CSV formatting assumptions. Unit test outputs are perfectly reliable.
Available unit tests:
- test_delimiter(path) → {',', ';', '\t'}
- test_quotechar(path) → {'"', "'"}
- test_skiprows(path) → {0, 1}

Format (NO code fences):
UNIT_TESTS: test_delimiter("file.csv"), test_quotechar("file.csv")

You may include multiple unit tests in a single UNIT_TESTS action. Each individual unit test counts toward the total number of unit tests used.

2) CODE
Write Python code toward solving the task using your current assumptions about the CSV format.
- Enclose code in ```python ... ```
- You may import pandas as pd and read the file with:
  pd.read_csv(filepath, delimiter=..., quotechar=..., skiprows=...)
- Do NOT print the entire CSV.
- If your code computes the final result, print it to stdout so it can be read from the output.

After submission, the code will be executed and its stdout and stderr will be returned. You may use this feedback to extract the answer, debug, run additional unit tests, refine, or write additional CODE.

3) ANSWER
Provide the final answer to the task and end the conversation.
Format exactly: ANSWER: <your_answer>
The conversation ends immediately after you provide ANSWER.

Reward:
- Let U be the total number of unit tests used.
- Let C be the total number of CODE actions taken.
- Final reward = correctness × (d_unit)^U × (d_code)^C.
- Discount factors represent cost multiplicatively.
- A smaller discount factor means a MORE expensive action.
- If d_code = d_unit^k, one CODE attempt costs about as much as k UNIT_TESTS.

General guidance:
- Start from reasonable default beliefs about the CSV format based on common conventions or provided likelihoods.
- Both UNIT_TESTS and CODE are costly actions; neither should be treated as free.
- Use UNIT_TESTS to reduce uncertainty when the expected benefit outweighs their cost.
- Use CODE to make progress toward solving the task, but recognize that failed or repeated CODE attempts are also costly.
- Decide when it is better to verify assumptions with UNIT_TESTS versus attempting CODE earlier, taking into account your confidence and the relative cost of these actions.
- Decide rationally how much debugging and iteration is worthwhile before committing to a final ANSWER."#;

pub const CODE_INSTRUCTION: &str = "You are given a CSV file {csv_name}.

Your task: {task_description}

Additional context:
- No format likelihoods are provided.
- Make reasonable default assumptions about the CSV format based on common conventions, unless you choose to verify them with unit tests.

Reward parameters:
- Unit test discount d_unit: {d_unit}
- Code iteration discount d_code: {d_code}

Constraints:
- You should never print all rows of the CSV or you will get zero reward.
- You may use UNIT_TESTS, CODE, or ANSWER as described in the system instructions in any order; only the final ANSWER ends the conversation.
- Incorrect intermediate CODE does not end the episode; only the final ANSWER determines correctness.";

pub const CODE_INSTRUCTION_WITH_PRIOR: &str = "You are given a CSV file {csv_name}.

Your task: {task_description}

Additional context:
- Estimated format likelihoods are provided below.
- These likelihoods reflect how likely each formatting option is in practice and can be used as default assumptions.

Format likelihoods:
{prior}

Reward parameters:
- Unit test discount d_unit: {d_unit}
- Code iteration discount d_code: {d_code}

Constraints:
- You should never print all rows of the CSV or you will get zero reward.
- You may use UNIT_TESTS, CODE, or ANSWER as described in the system instructions.";

/// Sent once after a reply that contains no usable action.
pub fn reminder(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::Pandora => {
            "Always respond with exactly one action token per step, using the format:\nVERIFY <Option> or GUESS <Option>."
        }
        EnvKind::Qa => {
            "Always respond with exactly one action token per step, using the format:\nRETRIEVE or ANSWER: <short factual answer>."
        }
        EnvKind::Code => {
            "Always respond with exactly one action per turn: UNIT_TESTS: test_...(\"file.csv\"), a ```python``` CODE block, or ANSWER: <your_answer>."
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template placeholder {{{0}}} has no value")]
    MissingPlaceholder(String),
    #[error("CTA prompt needs {0}, which the task does not provide")]
    MissingPrior(&'static str),
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"));

/// Substitutes `{name}` placeholders from `bindings`.
pub fn fill(template: &str, bindings: &[(&str, String)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in PLACEHOLDER.captures_iter(template) {
        let whole = caps.get(0).expect("group 0");
        let name = &caps[1];
        let value = bindings
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v)
            .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Drops every template line that mentions `{name}`.
fn without_line(template: &str, name: &str) -> String {
    let tag = format!("{{{name}}}");
    template.lines().filter(|l| !l.contains(&tag)).collect::<Vec<_>>().join("\n")
}

/// Task parameters: four decimals at most, trailing zeros trimmed, but at
/// least one digit after the point.
pub fn format_param(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

pub fn pandora_priors_str(ctx: &PandoraContext) -> String {
    ctx.labels.iter().zip(&ctx.priors).map(|(l, p)| format!("{l}: {p:.2}")).collect::<Vec<_>>().join(", ")
}

/// One line per attribute, three decimals.
pub fn format_likelihoods(prior: &FormatPrior) -> String {
    Attribute::ALL
        .iter()
        .map(|&a| {
            let entries: Vec<String> =
                prior.marginal(a).iter().enumerate().map(|(v, p)| format!("{}: {p:.3}", value_repr(a, v))).collect();
            format!("- {}: {}", a.param_name(), entries.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn turn(role: &str, content: String) -> ChatTurn {
    ChatTurn { role: role.into(), content }
}

pub fn render_pandora(ctx: &PandoraContext, cta: bool) -> Result<Vec<ChatTurn>, PromptError> {
    let bindings = [
        ("labels_str", ctx.labels.join(", ")),
        ("priors_str", pandora_priors_str(ctx)),
        ("r", format_param(ctx.gamma)),
    ];
    let template = if cta { PANDORA_INSTRUCTION.to_string() } else { without_line(PANDORA_INSTRUCTION, "priors_str") };
    Ok(vec![turn("system", PANDORA_SYSTEM.into()), turn("user", fill(&template, &bindings)?)])
}

pub fn render_qa(ctx: &QaContext, cta: bool) -> Result<Vec<ChatTurn>, PromptError> {
    let mut bindings = vec![
        ("question", ctx.question.clone()),
        ("r", format_param(ctx.gamma)),
        ("p_with_context", format_param(ctx.p_ret)),
    ];
    let template = if cta {
        let p = ctx.p_no_context.ok_or(PromptError::MissingPrior("p_no_context"))?;
        bindings.push(("p_no_context", format_param(p)));
        QA_INSTRUCTION.to_string()
    } else {
        without_line(QA_INSTRUCTION, "p_no_context")
    };
    Ok(vec![turn("system", fill(QA_SYSTEM, &bindings)?), turn("user", fill(&template, &bindings)?)])
}

/// The user turn that delivers a retrieved passage.
pub fn render_qa_retrieved(ctx: &QaContext, passage: &str) -> Result<String, PromptError> {
    fill(QA_AFTER_RETRIEVAL, &[("context", passage.to_string()), ("question", ctx.question.clone())])
}

pub fn render_code(ctx: &CodeContext, cta: bool) -> Result<Vec<ChatTurn>, PromptError> {
    let mut bindings = vec![
        ("csv_name", ctx.filename.clone()),
        ("task_description", ctx.task_description.clone()),
        ("d_unit", format_param(ctx.d_u)),
        ("d_code", format_param(ctx.d_c)),
    ];
    let template = if cta {
        let prior = ctx.prior.as_ref().ok_or(PromptError::MissingPrior("format likelihoods"))?;
        bindings.push(("prior", format_likelihoods(prior)));
        CODE_INSTRUCTION_WITH_PRIOR
    } else {
        CODE_INSTRUCTION
    };
    Ok(vec![turn("system", CODE_SYSTEM.into()), turn("user", fill(template, &bindings)?)])
}

/// Messages actually sent: with thinking disabled through an assistant
/// prefix, the empty think block opens the reply.
pub fn request_messages(messages: &[ChatTurn], config: &AgentConfig) -> Vec<ChatTurn> {
    let mut out = messages.to_vec();
    if config.thinking_disabled() && config.no_think_style == NoThinkStyle::AssistantPrefix {
        out.push(turn("assistant", THINK_PREFIX.into()));
    }
    out
}

/// Plain-text dump of a message list, used for golden files.
pub fn dump_messages(messages: &[ChatTurn]) -> String {
    messages.iter().map(|m| format!("### {}\n{}\n", m.role, m.content)).collect()
}
