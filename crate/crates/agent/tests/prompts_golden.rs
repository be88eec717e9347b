//! Rendered prompts against hand-written golden files.

use std::path::PathBuf;

use cta_agent::config::{AgentConfig, ThinkingMode};
use cta_agent::prompts::{dump_messages, render_code, render_pandora, render_qa, render_qa_retrieved, request_messages};
use cta_core::codeenv::{CodeBeliefSet, CodeContext};
use cta_core::filereading::FormatPrior;
use cta_core::pandora::PandoraContext;
use cta_core::qa::QaContext;

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn pandora() -> PandoraContext {
    PandoraContext {
        task_id: "case".into(),
        labels: vec!["A".into(), "B".into(), "C".into()],
        priors: vec![0.04, 0.68, 0.28],
        gamma: 0.2,
    }
}

fn qa() -> QaContext {
    QaContext {
        task_id: "q".into(),
        question: "Who wrote the novel Dracula?".into(),
        gamma: 0.45,
        p_ret: 0.578,
        p_no_context: Some(0.312),
    }
}

fn code() -> CodeContext {
    let prior = FormatPrior { marginals: [vec![0.075, 0.85, 0.075], vec![0.589, 0.411], vec![0.607, 0.393]] };
    CodeContext {
        task_id: "c".into(),
        filename: "must_eu.csv".into(),
        task_description:
            "What is the mean of the `salary` column, excluding any None entries? Report it with 6 significant digits."
                .into(),
        d_u: 0.77,
        d_c: 0.77f64.powi(4),
        rho: 4.0,
        initial_belief: CodeBeliefSet::from_prior(&prior),
        prior: Some(prior),
    }
}

#[test]
fn pandora_prompts() {
    assert_eq!(dump_messages(&render_pandora(&pandora(), true).unwrap()), golden("pandora_cta.txt"));
    assert_eq!(dump_messages(&render_pandora(&pandora(), false).unwrap()), golden("pandora_prompted.txt"));
}

#[test]
fn pandora_nt_request_carries_empty_think_prefix() {
    let cfg = AgentConfig { thinking: ThinkingMode::Disabled, ..Default::default() };
    let sent = request_messages(&render_pandora(&pandora(), true).unwrap(), &cfg);
    assert_eq!(dump_messages(&sent), golden("pandora_cta_nt.txt"));
    let thinking = request_messages(&render_pandora(&pandora(), true).unwrap(), &AgentConfig::default());
    assert_eq!(thinking.len(), 2);
}

#[test]
fn qa_prompts() {
    assert_eq!(dump_messages(&render_qa(&qa(), true).unwrap()), golden("qa_cta.txt"));
    assert_eq!(dump_messages(&render_qa(&qa(), false).unwrap()), golden("qa_prompted.txt"));
    let passage = "Dracula is an 1897 Gothic horror novel by Irish author Bram Stoker.";
    assert_eq!(render_qa_retrieved(&qa(), passage).unwrap() + "\n", golden("qa_retrieved.txt"));
}

#[test]
fn qa_cta_without_estimate_is_an_error() {
    let ctx = QaContext { p_no_context: None, ..qa() };
    assert!(render_qa(&ctx, true).is_err());
    assert!(render_qa(&ctx, false).is_ok());
}

#[test]
fn code_prompts() {
    assert_eq!(dump_messages(&render_code(&code(), false).unwrap()), golden("code_prompted.txt"));
    assert_eq!(dump_messages(&render_code(&code(), true).unwrap()), golden("code_cta.txt"));
    let no_prior = CodeContext { prior: None, ..code() };
    assert!(render_code(&no_prior, true).is_err());
}
