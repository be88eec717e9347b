//! Implementations of the `gen`, `run`, `calibrate` and `solve` subcommands.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cta_agent::{ChatBackend, HttpChatClient};
use cta_core::codeenv::{
    exact_expected_reward, oracle_value, CodeAction, CodeBeliefSet, CodeEnv, CodeFirst, CodeTask, MapGreedy,
    TestsThenCode,
};
use cta_core::filereading::estimator::DEFAULT_SMOOTHING;
use cta_core::filereading::generate::{load_dataset, load_weights, write_dataset};
use cta_core::filereading::{
    attribute_accuracy, bayes_rate, fit_prior_estimator, generate_dataset, FileReadingInstance, FilenameFeatures,
    FormatPrior, GeneratorConfig, OracleFormatModel, Split,
};
use cta_core::jsonl::{read_jsonl, to_jsonl_string};
use cta_core::pandora::{oracle_solve, sample_dataset, step_cap, PandoraAction, PandoraEnv, PandoraInstance};
use cta_core::qa::sim::{
    confidence_records, estimate_p_ret, expected_rewards, fit_calibration, sample_population, QaSimConfig,
    SimQuestion,
};
use cta_core::qa::{ece, oracle_decide, CalibrationModel, ConfidenceField, QaEnv, QaTask};
use cta_core::rng::derive_seed;
use cta_core::{run_batch, EnvKind, EpisodeTrace, DEFAULT_MAX_STEPS};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConfidenceSource, PriorSource, RunConfig};
use crate::policies::{AgentHandle, CodePolicy, PandoraPolicy, PolicySpec, QaPolicy};
use crate::{to_pretty_json, write_file, CliError};

pub const PANDORA_FILE: &str = "instances.jsonl";
pub const QA_VAL_FILE: &str = "val.jsonl";
pub const QA_TEST_FILE: &str = "test.jsonl";
pub const QA_SIM_FILE: &str = "sim.json";
pub const GENERATOR_FILE: &str = "generator.json";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const ESTIMATOR_FILE: &str = "estimator.json";

/// Equal-width bins used for calibration error.
pub const DEFAULT_ECE_BINS: usize = 10;

/// What `gen` produces.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    Pandora { n: usize, k: usize, alpha: f64, gammas: Vec<f64> },
    Qa { n_val: usize, n_test: usize, sim: QaSimConfig },
    FileReading { generator: GeneratorConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub kind: DatasetKind,
    pub seed: u64,
    pub out: PathBuf,
}

/// Parameters recorded next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PandoraGenRecord {
    n: usize,
    k: usize,
    alpha: f64,
    gammas: Vec<f64>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QaGenRecord {
    n_val: usize,
    n_test: usize,
    seed: u64,
    sim: QaSimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileReadingGenRecord {
    seed: u64,
    generator: GeneratorConfig,
}

/// Writes a dataset and returns the files created at its top level.
pub fn generate(opts: &GenOptions) -> Result<Vec<PathBuf>, CliError> {
    let out = &opts.out;
    match &opts.kind {
        DatasetKind::Pandora { n, k, alpha, gammas } => {
            let instances = sample_dataset(*n, *k, *alpha, gammas, opts.seed)?;
            let record = PandoraGenRecord { n: *n, k: *k, alpha: *alpha, gammas: gammas.clone(), seed: opts.seed };
            Ok(vec![
                write_file(out, PANDORA_FILE, to_jsonl_string(&instances).as_bytes())?,
                write_file(out, GENERATOR_FILE, &to_pretty_json(&record))?,
            ])
        }
        DatasetKind::Qa { n_val, n_test, sim } => {
            let val = sample_population(sim, *n_val, opts.seed, "val")?;
            // A second stream keeps test draws independent of the val size.
            let test = sample_population(sim, *n_test, derive_seed(opts.seed, "test"), "test")?;
            let record = QaGenRecord { n_val: *n_val, n_test: *n_test, seed: opts.seed, sim: *sim };
            Ok(vec![
                write_file(out, QA_VAL_FILE, to_jsonl_string(&val).as_bytes())?,
                write_file(out, QA_TEST_FILE, to_jsonl_string(&test).as_bytes())?,
                write_file(out, QA_SIM_FILE, &to_pretty_json(&record))?,
            ])
        }
        DatasetKind::FileReading { generator } => {
            let model = OracleFormatModel::default();
            let instances = generate_dataset(generator, &model, opts.seed)?;
            write_dataset(out, &instances, &model)?;
            let record = FileReadingGenRecord { seed: opts.seed, generator: generator.clone() };
            Ok(vec![
                out.join(cta_core::filereading::generate::MANIFEST_FILE),
                out.join(cta_core::filereading::generate::WEIGHTS_FILE),
                write_file(out, GENERATOR_FILE, &to_pretty_json(&record))?,
            ])
        }
    }
}

fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| CliError::io(path, e))
}

pub fn load_pandora(dir: &Path) -> Result<Vec<PandoraInstance>, CliError> {
    let instances: Vec<PandoraInstance> = read_jsonl_file(&dir.join(PANDORA_FILE))?;
    for inst in &instances {
        inst.validate()?;
    }
    Ok(instances)
}

pub fn load_qa(dir: &Path, file: &str) -> Result<Vec<SimQuestion>, CliError> {
    read_jsonl_file(&dir.join(file))
}

fn examples(instances: &[FileReadingInstance], split: Split) -> Vec<(FilenameFeatures, cta_core::filereading::FormatTriple)> {
    instances.iter().filter(|i| i.split == split).map(|i| (i.features(), i.true_format)).collect()
}

/// Estimator fitted on the train split of a FileReading dataset.
pub fn fit_train_estimator(
    instances: &[FileReadingInstance],
) -> Result<cta_core::filereading::EstimatedPriorModel, CliError> {
    Ok(fit_prior_estimator(&examples(instances, Split::Train), DEFAULT_SMOOTHING)?)
}

/// Where the traces of a run went.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub traces: PathBuf,
    pub n_traces: usize,
}

fn agent_handle(cfg: &RunConfig, backend: Option<Arc<dyn ChatBackend>>) -> Result<Option<AgentHandle>, CliError> {
    if !cfg.policies.iter().any(|p| p == "llm") {
        return Ok(None);
    }
    let config = cfg.agent.clone().unwrap_or_default().with_env_overrides();
    let backend = match backend {
        Some(b) => b,
        None => Arc::new(HttpChatClient::new(config.clone()).map_err(|e| CliError::Config(e.to_string()))?),
    };
    Ok(Some(AgentHandle { config, backend }))
}

fn pandora_traces(cfg: &RunConfig, agent: Option<&AgentHandle>) -> Result<Vec<EpisodeTrace>, CliError> {
    let base = load_pandora(&cfg.dataset)?;
    let instances: Vec<PandoraInstance> = if cfg.seeds.is_empty() {
        base
    } else {
        cfg.seeds.iter().flat_map(|s| base.iter().map(move |i| i.replicate(*s))).collect()
    };
    let k_max = instances.iter().map(PandoraInstance::k).max().unwrap_or(1);
    let max_steps = cfg.max_steps.unwrap_or_else(|| step_cap(k_max));
    let mut traces = Vec::new();
    for name in &cfg.policies {
        let spec = PolicySpec::parse(EnvKind::Pandora, name)?;
        PandoraPolicy::build(spec, agent)?;
        traces.extend(run_batch(
            &instances,
            |i| {
                let env = PandoraEnv::new(i.clone()).expect("instances were validated on load");
                (env, PandoraPolicy::build(spec, agent).expect("checked above"))
            },
            max_steps,
        )?);
    }
    Ok(traces)
}

fn confidence_for(q: &SimQuestion, source: ConfidenceSource, model: Option<&CalibrationModel>) -> Option<f64> {
    match source {
        ConfidenceSource::Calibrated => model.map(|m| m.apply(q.verbalized)),
        ConfidenceSource::Verbalized => Some(q.verbalized),
        ConfidenceSource::True => Some(q.k_da),
        ConfidenceSource::None => None,
    }
}

fn qa_traces(cfg: &RunConfig, agent: Option<&AgentHandle>) -> Result<Vec<EpisodeTrace>, CliError> {
    let questions = load_qa(&cfg.dataset, QA_TEST_FILE)?;
    let model = match (&cfg.qa.calibration, cfg.qa.confidence) {
        (Some(path), ConfidenceSource::Calibrated) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Some(CalibrationModel::from_json(&text)?)
        }
        _ => None,
    };
    let base: Vec<QaTask> = questions
        .iter()
        .map(|q| QaTask { k_hat: confidence_for(q, cfg.qa.confidence, model.as_ref()), ..q.task.clone() })
        .collect();
    let tasks: Vec<QaTask> = if cfg.seeds.is_empty() {
        base
    } else {
        cfg.seeds
            .iter()
            .flat_map(|s| {
                base.iter().map(move |t| {
                    let task_id = format!("{}#s{s}", t.task_id);
                    QaTask { seed: derive_seed(*s, &task_id), task_id, ..t.clone() }
                })
            })
            .collect()
    };
    for t in &tasks {
        t.validate()?;
    }
    let max_steps = cfg.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    let mut traces = Vec::new();
    for name in &cfg.policies {
        let spec = PolicySpec::parse(EnvKind::Qa, name)?;
        QaPolicy::build(spec, agent)?;
        traces.extend(run_batch(
            &tasks,
            |t| {
                let env = QaEnv::new(t.clone()).expect("tasks were validated");
                (env, QaPolicy::build(spec, agent).expect("checked above"))
            },
            max_steps,
        )?);
    }
    Ok(traces)
}

/// Code tasks for a FileReading dataset under the run's split, rho grid and
/// prior source.
pub fn code_tasks(cfg: &RunConfig) -> Result<Vec<CodeTask>, CliError> {
    let instances = load_dataset(&cfg.dataset)?;
    let prior_for: Box<dyn Fn(&FileReadingInstance) -> Option<FormatPrior>> = match cfg.code.prior {
        PriorSource::Estimator => {
            let est = fit_train_estimator(&instances)?;
            Box::new(move |i| Some(est.predict(i.features())))
        }
        PriorSource::Oracle => {
            let model = load_weights(&cfg.dataset)?;
            Box::new(move |i| Some(model.prior(i.features())))
        }
        PriorSource::Uniform => Box::new(|_| None),
    };
    let selected: Vec<&FileReadingInstance> = instances.iter().filter(|i| i.split == cfg.code.split).collect();
    if selected.is_empty() {
        return Err(CliError::Argument(format!("dataset has no {:?} instances", cfg.code.split)));
    }
    let mut tasks = Vec::new();
    for inst in selected {
        let prior = prior_for(inst);
        if cfg.code.rho.is_empty() {
            tasks.push(CodeTask::from_instance(inst, prior));
        } else {
            for rho in &cfg.code.rho {
                tasks.push(CodeTask::from_instance(&inst.with_rho(*rho), prior.clone()));
            }
        }
    }
    Ok(tasks)
}

fn code_traces(cfg: &RunConfig, agent: Option<&AgentHandle>) -> Result<Vec<EpisodeTrace>, CliError> {
    let tasks = code_tasks(cfg)?;
    let max_steps = cfg.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    let mut traces = Vec::new();
    for name in &cfg.policies {
        let spec = PolicySpec::parse(EnvKind::Code, name)?;
        CodePolicy::build(spec, agent)?;
        traces.extend(run_batch(
            &tasks,
            |t| {
                let env = CodeEnv::new(t.clone()).expect("generated tasks are valid");
                (env, CodePolicy::build(spec, agent).expect("checked above"))
            },
            max_steps,
        )?);
    }
    Ok(traces)
}

/// Runs every configured policy and returns the traces sorted by task id,
/// then policy name.
pub fn run_traces(cfg: &RunConfig, backend: Option<Arc<dyn ChatBackend>>) -> Result<Vec<EpisodeTrace>, CliError> {
    cfg.validate()?;
    let agent = agent_handle(cfg, backend)?;
    let mut traces = match cfg.env {
        EnvKind::Pandora => pandora_traces(cfg, agent.as_ref())?,
        EnvKind::Qa => qa_traces(cfg, agent.as_ref())?,
        EnvKind::Code => code_traces(cfg, agent.as_ref())?,
    };
    traces.sort_by(|a, b| a.task_id.cmp(&b.task_id).then_with(|| a.policy_name.cmp(&b.policy_name)));
    Ok(traces)
}

/// Runs the config and writes `traces.jsonl` under `out`.
pub fn run(cfg: &RunConfig, out: &Path, backend: Option<Arc<dyn ChatBackend>>) -> Result<RunSummary, CliError> {
    let traces = run_traces(cfg, backend)?;
    let path = write_file(out, TRACES_FILE, to_jsonl_string(&traces).as_bytes())?;
    Ok(RunSummary { traces: path, n_traces: traces.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaCalibrationSummary {
    pub n_val: usize,
    pub n_test: usize,
    pub bins: usize,
    pub ece_before: f64,
    pub ece_after: f64,
    pub p_ret_estimate: f64,
    pub steps: usize,
}

/// Fits isotonic calibration on the val split, scores it on the test split
/// and writes `calibration.json` and `calibration_report.json`.
pub fn calibrate_qa(data: &Path, out: &Path, bins: usize) -> Result<QaCalibrationSummary, CliError> {
    let val = load_qa(data, QA_VAL_FILE)?;
    let test = load_qa(data, QA_TEST_FILE)?;
    let model = fit_calibration(&val)?;
    let records = confidence_records(&test, Some(&model));
    let summary = QaCalibrationSummary {
        n_val: val.len(),
        n_test: test.len(),
        bins,
        ece_before: ece(&records, bins, ConfidenceField::Verbalized)?,
        ece_after: ece(&records, bins, ConfidenceField::Calibrated)?,
        p_ret_estimate: estimate_p_ret(&val)?,
        steps: model.breakpoints.len(),
    };
    write_file(out, CALIBRATION_FILE, (model.to_json() + "\n").as_bytes())?;
    write_file(out, "calibration_report.json", &to_pretty_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub val_accuracy: f64,
    pub val_bayes_rate: f64,
}

/// Fits the filename prior estimator on the train split, scores it on val
/// against the Bayes rate and writes `estimator.json` and
/// `estimator_report.json`.
pub fn calibrate_filereading(data: &Path, out: &Path) -> Result<EstimatorSummary, CliError> {
    let instances = load_dataset(data)?;
    let weights = load_weights(data)?;
    let estimator = fit_train_estimator(&instances)?;
    let val = examples(&instances, Split::Val);
    let val_features: Vec<FilenameFeatures> = val.iter().map(|(f, _)| *f).collect();
    let summary = EstimatorSummary {
        n_train: instances.iter().filter(|i| i.split == Split::Train).count(),
        n_val: val.len(),
        val_accuracy: attribute_accuracy(&estimator, &val),
        val_bayes_rate: bayes_rate(&weights, &val_features),
    };
    write_file(out, ESTIMATOR_FILE, &to_pretty_json(&estimator))?;
    write_file(out, "estimator_report.json", &to_pretty_json(&summary))?;
    Ok(summary)
}

/// A one-off oracle query.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveQuery {
    Pandora { priors: Vec<f64>, gamma: f64 },
    Qa { k_da: f64, p_ret: f64, gamma: f64 },
    Code { filename: String, d_u: f64, rho: f64, weights: Option<PathBuf> },
}

fn pandora_action_json(action: PandoraAction, labels: &[String]) -> Value {
    match action {
        PandoraAction::Verify(i) => json!(format!("VERIFY {}", labels[i])),
        PandoraAction::Commit(i) => json!(format!("GUESS {}", labels[i])),
    }
}

fn code_action_json(action: &CodeAction) -> Value {
    match action {
        CodeAction::UnitTests(attrs) => {
            json!({ "unit_tests": attrs.iter().map(|a| a.param_name()).collect::<Vec<_>>() })
        }
        CodeAction::Code(z) => json!({ "code": z.to_string() }),
        CodeAction::Answer(a) => json!({ "answer": a }),
    }
}

pub fn solve(query: &SolveQuery) -> Result<Value, CliError> {
    match query {
        SolveQuery::Pandora { priors, gamma } => {
            let inst = PandoraInstance::new("solve", priors.clone(), *gamma, 1, 0)?;
            let all: Vec<usize> = (0..inst.k()).collect();
            let d = oracle_solve(&inst.priors, &all, *gamma)?;
            Ok(json!({
                "env": "pandora",
                "value": d.value,
                "v_guess": d.v_guess,
                "v_verify": d.v_verify,
                "action": pandora_action_json(d.action, &inst.labels),
            }))
        }
        SolveQuery::Qa { k_da, p_ret, gamma } => {
            let unit = |x: f64| (0.0..=1.0).contains(&x);
            if !(unit(*k_da) && unit(*p_ret) && unit(*gamma)) {
                return Err(CliError::Argument("k, p_ret and gamma must lie in [0,1]".into()));
            }
            let decision = oracle_decide(*k_da, *p_ret, *gamma);
            Ok(json!({
                "env": "qa",
                "decision": decision,
                "value_direct": k_da,
                "value_retrieve": p_ret * gamma,
                "value": k_da.max(p_ret * gamma),
            }))
        }
        SolveQuery::Code { filename, d_u, rho, weights } => {
            if !(*d_u > 0.0 && *d_u <= 1.0) || !(rho.is_finite() && *rho >= 0.0) {
                return Err(CliError::Argument("need 0 < d_u <= 1 and rho >= 0".into()));
            }
            let model = match weights {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                    OracleFormatModel::from_json(&text)?
                }
                None => OracleFormatModel::default(),
            };
            let prior = model.prior(FilenameFeatures::from_filename(filename));
            let belief = CodeBeliefSet::from_prior(&prior);
            let d_c = d_u.powf(*rho);
            let (value, action) = oracle_value(&belief, *d_u, d_c);
            let baselines = json!({
                "tests_then_code_3": exact_expected_reward(|| TestsThenCode { k: 3 }, &belief, *d_u, d_c)?,
                "code_first": exact_expected_reward(|| CodeFirst, &belief, *d_u, d_c)?,
                "map_greedy": exact_expected_reward(|| MapGreedy, &belief, *d_u, d_c)?,
            });
            Ok(json!({
                "env": "code",
                "d_u": d_u,
                "d_c": d_c,
                "value": value,
                "action": code_action_json(&action),
                "prior": prior.marginals,
                "baselines": baselines,
            }))
        }
    }
}

/// Exact QA expected rewards for a simulator config, as reported by
/// `solve qa --population`.
pub fn solve_qa_population(sim: &QaSimConfig) -> Result<Value, CliError> {
    let r = expected_rewards(sim)?;
    Ok(serde_json::to_value(r).expect("plain struct"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_pandora_case() {
        let v = solve(&SolveQuery::Pandora { priors: vec![0.04, 0.68, 0.28], gamma: 0.2 }).unwrap();
        assert_eq!(v["action"], "GUESS B");
        assert!((v["v_verify"].as_f64().unwrap() - 0.192).abs() < 1e-9);
        assert!(solve(&SolveQuery::Pandora { priors: vec![0.5, 0.6], gamma: 0.2 }).is_err());
    }

    #[test]
    fn solve_qa_and_code() {
        let v = solve(&SolveQuery::Qa { k_da: 0.2, p_ret: 0.6, gamma: 0.5 }).unwrap();
        assert_eq!(v["decision"], "retrieve");
        assert!(solve(&SolveQuery::Qa { k_da: 1.2, p_ret: 0.6, gamma: 0.5 }).is_err());
        let c = solve(&SolveQuery::Code { filename: "x_eu.csv".into(), d_u: 0.9, rho: 4.0, weights: None }).unwrap();
        let value = c["value"].as_f64().unwrap();
        for (_, b) in c["baselines"].as_object().unwrap() {
            assert!(value + 1e-12 >= b.as_f64().unwrap());
        }
    }

    #[test]
    fn qa_generation_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let opts = |out: PathBuf| GenOptions {
            kind: DatasetKind::Qa { n_val: 30, n_test: 20, sim: QaSimConfig::default() },
            seed: 4,
            out,
        };
        generate(&opts(dir.path().join("a"))).unwrap();
        generate(&opts(dir.path().join("b"))).unwrap();
        for f in [QA_VAL_FILE, QA_TEST_FILE, QA_SIM_FILE] {
            let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        assert_eq!(load_qa(&dir.path().join("a"), QA_TEST_FILE).unwrap().len(), 20);
    }
}
