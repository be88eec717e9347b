//! Reply grammars: fixture replies, round trips and the CTA toggle.

use std::path::PathBuf;

use proptest::prelude::*;

use cta_agent::parse::{parse_action, render_action, AgentAction};
use cta_agent::prompts::{render_code, render_pandora, render_qa};
use cta_core::codeenv::{CodeBeliefSet, CodeContext};
use cta_core::filereading::{Attribute, FormatPrior, FormatTriple};
use cta_core::pandora::PandoraContext;
use cta_core::qa::QaContext;
use cta_core::EnvKind;

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn pandora_case_study_replies() {
    let nt = ["VERIFY A", "VERIFY B", "GUESS C"];
    let want = [AgentAction::Verify("A".into()), AgentAction::Verify("B".into()), AgentAction::Guess("C".into())];
    for (reply, want) in nt.iter().zip(want) {
        assert_eq!(parse_action(EnvKind::Pandora, reply).unwrap().action, want);
    }
    // The reasoning mentions other actions; only the text after it counts.
    let prompted = fixture("pandora_prompted_reply.txt");
    assert_eq!(parse_action(EnvKind::Pandora, &prompted).unwrap().action, AgentAction::Guess("A".into()));
    let cta = fixture("pandora_cta_reply.txt");
    let parsed = parse_action(EnvKind::Pandora, &cta).unwrap();
    assert_eq!(parsed.action, AgentAction::Guess("B".into()));
    assert_eq!(parsed.raw, cta);
}

#[test]
fn code_case_study_replies() {
    let want = AgentAction::UnitTests(vec![Attribute::Delimiter, Attribute::Quote]);
    for name in ["code_rl_reply.txt", "code_cta_rl_reply.txt"] {
        assert_eq!(parse_action(EnvKind::Code, &fixture(name)).unwrap().action, want, "{name}");
    }
    let line = r#"UNIT_TESTS: test_delimiter("must_eu.csv"), test_quotechar("must_eu.csv")"#;
    assert_eq!(parse_action(EnvKind::Code, line).unwrap().action, want);
}

fn pandora_ctx() -> PandoraContext {
    PandoraContext {
        task_id: "t".into(),
        labels: vec!["A".into(), "B".into(), "C".into(), "D".into()],
        priors: vec![0.1, 0.2, 0.3, 0.4],
        gamma: 0.7,
    }
}

/// Lines of `b` not in `a`, and of `a` not in `b`, by position-free diff.
fn line_diff(a: &str, b: &str) -> (Vec<String>, Vec<String>) {
    let la: Vec<&str> = a.lines().collect();
    let lb: Vec<&str> = b.lines().collect();
    let only_a = la.iter().filter(|l| !lb.contains(l)).map(|s| s.to_string()).collect();
    let only_b = lb.iter().filter(|l| !la.contains(l)).map(|s| s.to_string()).collect();
    (only_a, only_b)
}

#[test]
fn cta_toggle_only_adds_the_priors_line() {
    let on = render_pandora(&pandora_ctx(), true).unwrap();
    let off = render_pandora(&pandora_ctx(), false).unwrap();
    assert_eq!(on[0], off[0]);
    assert_eq!(line_diff(&on[1].content, &off[1].content), (vec!["- Prior Probabilities: A: 0.10, B: 0.20, C: 0.30, D: 0.40".into()], vec![]));

    let q = QaContext { task_id: "q".into(), question: "Q?".into(), gamma: 0.3, p_ret: 0.6, p_no_context: Some(0.25) };
    let on = render_qa(&q, true).unwrap();
    let off = render_qa(&q, false).unwrap();
    assert_eq!(on[0], off[0]);
    assert_eq!(
        line_diff(&on[1].content, &off[1].content),
        (vec!["- Success probability without retrieval (p_no_context): 0.25".into()], vec![])
    );
}

#[test]
fn code_cta_toggle_is_confined_to_prior_sections() {
    let prior = FormatPrior { marginals: [vec![0.2, 0.5, 0.3], vec![0.9, 0.1], vec![0.5, 0.5]] };
    let ctx = CodeContext {
        task_id: "c".into(),
        filename: "x.csv".into(),
        task_description: "Task.".into(),
        d_u: 0.9,
        d_c: 0.81,
        rho: 2.0,
        initial_belief: CodeBeliefSet::from_prior(&prior),
        prior: Some(prior),
    };
    let on = render_code(&ctx, true).unwrap();
    let off = render_code(&ctx, false).unwrap();
    assert_eq!(on[0], off[0]);
    let section = |text: &str, header: &str| -> String {
        let start = text.find(header).expect("section present");
        let end = text[start..].find("\n\n").map_or(text.len(), |e| start + e);
        text[start..end].to_string()
    };
    // Everything outside "Additional context", "Format likelihoods" and
    // "Constraints" is shared.
    let strip = |text: &str| -> String {
        let mut out = text.to_string();
        for header in ["Additional context:", "Format likelihoods:", "Constraints:"] {
            if out.contains(header) {
                let s = section(&out, header);
                out = out.replace(&s, "");
            }
        }
        while out.contains("\n\n\n") {
            out = out.replace("\n\n\n", "\n\n");
        }
        out
    };
    assert_eq!(strip(&on[1].content), strip(&off[1].content));
    assert!(on[1].content.contains("- delimiter: ',': 0.200, ';': 0.500, '\\t': 0.300"));
}

fn label() -> impl Strategy<Value = String> {
    "[A-Z]"
}

fn answer() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 .,'-]{0,30}[A-Za-z0-9]".prop_map(|s| s.trim().to_string())
}

fn attributes() -> impl Strategy<Value = Vec<Attribute>> {
    proptest::sample::subsequence(Attribute::ALL.to_vec(), 1..=3).prop_shuffle()
}

fn action_for(env: EnvKind) -> BoxedStrategy<AgentAction> {
    match env {
        EnvKind::Pandora => prop_oneof![label().prop_map(AgentAction::Verify), label().prop_map(AgentAction::Guess)].boxed(),
        EnvKind::Qa => prop_oneof![Just(AgentAction::Retrieve), answer().prop_map(AgentAction::Answer)].boxed(),
        EnvKind::Code => prop_oneof![
            attributes().prop_map(AgentAction::UnitTests),
            (0..FormatTriple::COUNT).prop_map(|i| AgentAction::Code(FormatTriple::from_index(i))),
            answer().prop_map(AgentAction::Answer),
        ]
        .boxed(),
    }
}

fn env_and_action() -> impl Strategy<Value = (EnvKind, AgentAction)> {
    prop_oneof![Just(EnvKind::Pandora), Just(EnvKind::Qa), Just(EnvKind::Code)]
        .prop_flat_map(|env| action_for(env).prop_map(move |a| (env, a)))
}

proptest! {
    #[test]
    fn parse_inverts_render((env, action) in env_and_action(), think in proptest::option::of("[a-z ]{0,40}")) {
        let mut reply = render_action(&action, "data_eu_sas.csv");
        if let Some(t) = think {
            reply = format!("<think>\n{t}\n</think>\n\n{reply}");
        }
        prop_assert_eq!(parse_action(env, &reply).unwrap().action, action);
    }
}
