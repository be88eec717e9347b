//! The `cta` binary end to end, plus library-level runs with a scripted
//! chat backend.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use cta_agent::{AgentConfig, ChatBackend, FnChat};
use cta_cli::commands::{self, TRACES_FILE};
use cta_cli::{build_report, load_traces, RunConfig};
use cta_core::{ChatTurn, EnvKind, EpisodeStatus};

fn cta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cta")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cta(args);
    assert!(out.status.success(), "cta {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn gen_pandora_writes_n_instances() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    ok(&["gen", "pandora", "--k", "3", "--alpha", "0.5", "--n", "100", "--out", s(&out)]);
    let text = String::from_utf8(read(out.join("instances.jsonl"))).unwrap();
    assert_eq!(text.lines().count(), 100);
    let inst = commands::load_pandora(&out).unwrap();
    assert!(inst.iter().all(|i| i.k() == 3));
}

#[test]
fn gen_filereading_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        ok(&["gen", "filereading", "--n", "40", "--seed", "7", "--out", s(out)]);
    }
    ok(&["gen", "filereading", "--n", "40", "--seed", "8", "--out", s(&c)]);
    for f in ["manifest.jsonl", "weights.json", "generator.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    assert_ne!(read(a.join("manifest.jsonl")), read(c.join("manifest.jsonl")));
    let instances = cta_core::filereading::generate::load_dataset(&a).unwrap();
    let again = cta_core::filereading::generate::load_dataset(&b).unwrap();
    assert_eq!(instances, again);
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let out = cta(&["run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "version = 1\nenv = \"pandora\"\npolicies = [\"oracle\"]\ndataset = \"missing\"\n").unwrap();
    let out = cta(&["run", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let out = cta(&["solve", "pandora", "--priors", "0.5,0.6", "--gamma", "0.2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn solve_prints_oracle_decisions() {
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["solve", "pandora", "--priors", "0.04,0.68,0.28", "--gamma", "0.2"])).unwrap();
    assert_eq!(v["action"], "GUESS B");
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["solve", "qa", "--k", "0.1", "--p-ret", "0.578", "--gamma", "0.6"])).unwrap();
    assert_eq!(v["decision"], "retrieve");
    let v: serde_json::Value = serde_json::from_str(&ok(&["solve", "qa", "--population"])).unwrap();
    assert!(v["oracle_threshold"].as_f64().unwrap() > v["never_retrieve"].as_f64().unwrap());
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["solve", "code", "--filename", "sales_eu_sas.csv", "--d-u", "0.9", "--rho", "4"]))
            .unwrap();
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn qa_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("qa");
    ok(&["gen", "qa", "--n", "800", "--seed", "3", "--out", s(&data)]);
    let calib: serde_json::Value = serde_json::from_str(&ok(&["calibrate", "qa", "--data", s(&data)])).unwrap();
    assert!(calib["ece_after"].as_f64().unwrap() < calib["ece_before"].as_f64().unwrap());
    let cfg = write_config(
        dir.path(),
        r#"version = 1
env = "qa"
policies = ["oracle_threshold", "never_retrieve", "always_retrieve"]
dataset = "qa"

[qa]
confidence = "calibrated"
calibration = "qa/calibration.json"
"#,
    );
    let runs = dir.path().join("runs");
    ok(&["run", "--config", s(&cfg), "--out", s(&runs)]);
    ok(&["report", s(&runs.join(TRACES_FILE))]);
    let report: serde_json::Value = serde_json::from_slice(&read(runs.join("report.json"))).unwrap();
    let pct = |p: &str| {
        report["policies"].as_array().unwrap().iter().find(|a| a["policy"] == p).unwrap()["retrieve_pct"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(pct("never_retrieve"), 0.0);
    assert_eq!(pct("always_retrieve"), 100.0);
    let scatter = String::from_utf8(read(runs.join("qa_scatter.csv"))).unwrap();
    assert!(scatter.starts_with("task_id,policy,gamma,k_hat,p_ret,boundary,action,threshold_action\n"));
    assert_eq!(scatter.lines().count(), 1 + 3 * 800);
}

#[test]
fn report_rejects_mixed_environments() {
    let dir = tempfile::tempdir().unwrap();
    let pdata = dir.path().join("p");
    ok(&["gen", "pandora", "--n", "5", "--out", s(&pdata)]);
    let qdata = dir.path().join("q");
    ok(&["gen", "qa", "--n", "5", "--out", s(&qdata)]);
    let p = RunConfig::from_toml(&format!(
        "version = 1\nenv = \"pandora\"\npolicies = [\"oracle\"]\ndataset = {:?}\n",
        s(&pdata)
    ))
    .unwrap();
    let q = RunConfig::from_toml(&format!(
        "version = 1\nenv = \"qa\"\npolicies = [\"never_retrieve\"]\ndataset = {:?}\n[qa]\nconfidence = \"true\"\n",
        s(&qdata)
    ))
    .unwrap();
    let pt = commands::run(&p, &dir.path().join("pr"), None).unwrap().traces;
    let qt = commands::run(&q, &dir.path().join("qr"), None).unwrap().traces;
    let out = cta(&["report", s(&pt), s(&qt), "--out", s(&dir.path().join("rep"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mixed environments"));
}

fn guess_a() -> Arc<dyn ChatBackend> {
    Arc::new(FnChat(|_: &[ChatTurn]| Ok("<think>\nA looks fine.\n</think>\n\nGUESS A".to_string())))
}

#[test]
fn llm_policy_runs_with_an_injected_backend() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("p");
    ok(&["gen", "pandora", "--n", "30", "--seed", "2", "--out", s(&data)]);
    let mut cfg = RunConfig::from_toml(&format!(
        "version = 1\nenv = \"pandora\"\npolicies = [\"llm\", \"guess_0\"]\ndataset = {:?}\n[agent]\ncta = true\nthinking = \"disabled\"\n",
        s(&data)
    ))
    .unwrap();
    cfg.validate().unwrap();
    let traces = commands::run_traces(&cfg, Some(guess_a())).unwrap();
    assert_eq!(traces.len(), 60);
    let llm: Vec<_> = traces.iter().filter(|t| t.policy_name == "cta_prompted_nt").collect();
    let fixed: Vec<_> = traces.iter().filter(|t| t.policy_name == "guess_0").collect();
    assert_eq!(llm.len(), 30);
    for (l, f) in llm.iter().zip(&fixed) {
        assert_eq!(l.status, EpisodeStatus::Committed);
        assert_eq!((l.correctness, l.reward), (f.correctness, f.reward));
        assert!(l.transcript[1].content.contains("Prior Probabilities"));
    }
    let report = build_report(&traces, None).unwrap();
    assert_eq!(report.env, EnvKind::Pandora);
    let agg = report.policies.iter().find(|a| a.policy == "cta_prompted_nt").unwrap();
    assert_eq!(agg.status.committed, 30);

    // Without an [agent] table the default config is used; a transport
    // failure leaves Errored episodes that the match rate ignores.
    cfg.agent = Some(AgentConfig::default());
    let failing: Arc<dyn ChatBackend> = Arc::new(FnChat(|_: &[ChatTurn]| {
        Err(cta_agent::ClientError::RetriesExhausted { attempts: 1, last: "down".into() })
    }));
    cfg.policies = vec!["llm".into()];
    let traces = commands::run_traces(&cfg, Some(failing)).unwrap();
    assert!(traces.iter().all(|t| t.status == EpisodeStatus::Errored));
    let report = build_report(&traces, None).unwrap();
    assert_eq!(report.policies[0].status.errored, 30);
    assert_eq!(report.policies[0].match_rate, None);
}

#[test]
fn report_is_idempotent_and_trace_pure() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fr");
    ok(&["gen", "filereading", "--n", "40", "--seed", "1", "--out", s(&data)]);
    let cfg = write_config(
        dir.path(),
        r#"version = 1
env = "code"
policies = ["oracle", "tests_then_code_3", "code_first", "map_greedy"]
dataset = "fr"

[code]
rho = [0.5, 4.0]
split = "train"
"#,
    );
    let runs = dir.path().join("runs");
    ok(&["run", "--config", s(&cfg), "--out", s(&runs)]);
    let traces_path = runs.join(TRACES_FILE);
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    ok(&["report", s(&traces_path), "--out", s(&r1)]);
    ok(&["report", s(&traces_path), "--out", s(&r2)]);
    for f in ["report.json", "summary.csv", "per_rho.csv", "pareto.csv"] {
        assert_eq!(read(r1.join(f)), read(r2.join(f)), "{f}");
    }
    // Aggregate consistency with the per-trace rewards.
    let traces = load_traces(&[traces_path]).unwrap();
    let report = build_report(&traces, None).unwrap();
    for agg in &report.policies {
        let rewards: Vec<f64> = traces.iter().filter(|t| t.policy_name == agg.policy).map(|t| t.reward).collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        assert!((agg.mean_reward - mean).abs() < 1e-12);
    }
    let baseline = report.per_rho.iter().filter(|b| b.policy == "tests_then_code_3");
    for b in baseline {
        assert_eq!(b.patterns["tests_then_code"], 1.0);
        assert_eq!(b.patterns["guess_and_go"], 0.0);
    }
}
