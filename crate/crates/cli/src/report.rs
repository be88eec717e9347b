//! Reports computed from trace files alone.
//!
//! [`build_report`] is a pure function of the traces: it never consults a
//! dataset, so re-running it on the same files yields the same bytes. Output
//! files:
//!
//! - `report.json`: the whole [`ReportBundle`].
//! - `summary.csv`: one row per policy.
//! - `per_rho.csv`: code env, one row per (policy, rho) with pattern shares.
//! - `pareto.csv`: code env, reward delta against the reference per rho.
//! - `qa_scatter.csv`: QA env, one (gamma, k_hat, action) row per trace.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use cta_core::episode::{codes_before_testing, explore_counts, LABEL_RETRIEVE};
use cta_core::pandora::trace_follows_oracle;
use cta_core::qa::{oracle_decide, QaDecision};
use cta_core::{classify_action_pattern, ActionPattern, EnvKind, EpisodeStatus, EpisodeTrace};
use serde::{Deserialize, Serialize};

use crate::{to_pretty_json, write_file, CliError};

pub const REPORT_SCHEMA: &str = "report/v1";

/// Code-env reference for reward deltas, the three-tests-then-code baseline.
pub const DEFAULT_REFERENCE: &str = "tests_then_code_3";

/// Rewards closer than this count as tied when checking dominance.
const DOMINANCE_EPS: f64 = 1e-12;

/// Reads JSON-lines trace files in order. Blank lines are skipped.
pub fn load_traces(paths: &[PathBuf]) -> Result<Vec<EpisodeTrace>, CliError> {
    let mut traces = Vec::new();
    for path in paths {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CliError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let trace = serde_json::from_str(&line).map_err(|e| CliError::Trace {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            traces.push(trace);
        }
    }
    Ok(traces)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusTally {
    pub committed: usize,
    pub step_cap: usize,
    pub protocol_violation: usize,
    pub errored: usize,
}

impl StatusTally {
    fn add(&mut self, status: EpisodeStatus) {
        match status {
            EpisodeStatus::Committed => self.committed += 1,
            EpisodeStatus::StepCap => self.step_cap += 1,
            EpisodeStatus::ProtocolViolation => self.protocol_violation += 1,
            EpisodeStatus::Errored => self.errored += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub n: usize,
    pub mean_reward: f64,
    pub accuracy: f64,
    /// Actions per episode, the commit included.
    pub mean_turns: f64,
    /// QA only: percentage of episodes that retrieved.
    pub retrieve_pct: Option<f64>,
    /// QA only: share of episodes whose retrieve decision equals the
    /// threshold rule applied to the recorded (gamma, k_hat, p_ret).
    pub threshold_agreement: Option<f64>,
    /// Code only: mean number of unit tests (U).
    pub mean_unit_tests: Option<f64>,
    /// Code only: mean number of code attempts (C).
    pub mean_code_attempts: Option<f64>,
    /// Pandora only: share of non-errored episodes that follow the oracle.
    pub match_rate: Option<f64>,
    pub status: StatusTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoBreakdown {
    pub policy: String,
    pub rho: f64,
    pub n: usize,
    pub mean_reward: f64,
    pub accuracy: f64,
    pub mean_turns: f64,
    pub mean_unit_tests: f64,
    pub mean_code_attempts: f64,
    /// Share of each [`ActionPattern`]; sums to 1.
    pub patterns: BTreeMap<String, f64>,
    /// Share of episodes whose first code attempt precedes every unit test.
    pub codes_before_testing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub policy: String,
    pub rho: f64,
    pub mean_reward: f64,
    /// Mean paired reward difference against the reference over the tasks
    /// both were run on.
    pub delta_reward: f64,
    pub n_paired: usize,
    /// Policies with a strictly higher mean reward at the same rho.
    pub dominated_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: String,
    pub env: EnvKind,
    pub n_traces: usize,
    pub reference: Option<String>,
    pub policies: Vec<PolicyAggregate>,
    pub per_rho: Vec<RhoBreakdown>,
    pub pareto: Vec<ParetoPoint>,
}

/// One row of the QA decision scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub task_id: String,
    pub policy: String,
    pub gamma: f64,
    pub k_hat: f64,
    pub p_ret: f64,
    /// `p_ret * gamma`, the retrieve boundary on the k_hat axis.
    pub boundary: f64,
    pub action: String,
    pub threshold_action: String,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn retrieved(t: &EpisodeTrace) -> bool {
    t.explore_labels().any(|l| l == LABEL_RETRIEVE)
}

fn decision_str(retrieve: bool) -> &'static str {
    if retrieve {
        "retrieve"
    } else {
        "answer"
    }
}

fn meta_or(t: &EpisodeTrace, key: &str) -> Result<f64, CliError> {
    t.meta_f64(key)
        .ok_or_else(|| CliError::Argument(format!("trace {} ({}) has no {key} in meta", t.task_id, t.policy_name)))
}

/// Decision scatter rows for QA traces that carry a confidence estimate.
pub fn qa_scatter<'a>(traces: impl IntoIterator<Item = &'a EpisodeTrace>) -> Vec<ScatterRow> {
    traces
        .into_iter()
        .filter(|t| t.env == EnvKind::Qa)
        .filter_map(|t| {
            let gamma = t.meta_f64("gamma")?;
            let p_ret = t.meta_f64("p_ret")?;
            let k_hat = t.meta_f64("k_hat").or_else(|| t.meta_f64("k_da"))?;
            let rule = oracle_decide(k_hat, p_ret, gamma) == QaDecision::Retrieve;
            Some(ScatterRow {
                task_id: t.task_id.clone(),
                policy: t.policy_name.clone(),
                gamma,
                k_hat,
                p_ret,
                boundary: p_ret * gamma,
                action: decision_str(retrieved(t)).into(),
                threshold_action: decision_str(rule).into(),
            })
        })
        .collect()
}

fn aggregate(env: EnvKind, policy: &str, traces: &[&EpisodeTrace]) -> Result<PolicyAggregate, CliError> {
    let mut status = StatusTally::default();
    for t in traces {
        status.add(t.status);
    }
    let counts: Vec<_> = traces.iter().map(|t| explore_counts(t)).collect();
    let code = env == EnvKind::Code;
    let (retrieve_pct, threshold_agreement) = if env == EnvKind::Qa {
        let pct = 100.0 * mean(traces.iter().map(|t| f64::from(u8::from(retrieved(t)))));
        let rows = qa_scatter(traces.iter().copied());
        let agree = (!rows.is_empty())
            .then(|| mean(rows.iter().map(|r| f64::from(u8::from(r.action == r.threshold_action)))));
        (Some(pct), agree)
    } else {
        (None, None)
    };
    let match_rate = if env == EnvKind::Pandora {
        let scored: Vec<_> = traces.iter().filter(|t| t.status != EpisodeStatus::Errored).collect();
        if scored.is_empty() {
            None
        } else {
            let mut hits = 0usize;
            for t in &scored {
                hits += usize::from(trace_follows_oracle(t)?);
            }
            Some(hits as f64 / scored.len() as f64)
        }
    } else {
        None
    };
    Ok(PolicyAggregate {
        policy: policy.to_string(),
        n: traces.len(),
        mean_reward: mean(traces.iter().map(|t| t.reward)),
        accuracy: mean(traces.iter().map(|t| f64::from(t.correctness))),
        mean_turns: mean(traces.iter().map(|t| t.actions.len() as f64)),
        retrieve_pct,
        threshold_agreement,
        mean_unit_tests: code.then(|| mean(counts.iter().map(|c| c.unit_tests as f64))),
        mean_code_attempts: code.then(|| mean(counts.iter().map(|c| c.code as f64))),
        match_rate,
        status,
    })
}

fn rho_breakdown(policy: &str, rho: f64, traces: &[&EpisodeTrace]) -> Result<RhoBreakdown, CliError> {
    let mut patterns: BTreeMap<String, f64> = ActionPattern::ALL.iter().map(|p| (p.as_str().to_string(), 0.0)).collect();
    for t in traces {
        let p = classify_action_pattern(t)?;
        *patterns.get_mut(p.as_str()).expect("every pattern is listed") += 1.0;
    }
    let n = traces.len() as f64;
    for share in patterns.values_mut() {
        *share /= n;
    }
    let counts: Vec<_> = traces.iter().map(|t| explore_counts(t)).collect();
    Ok(RhoBreakdown {
        policy: policy.to_string(),
        rho,
        n: traces.len(),
        mean_reward: mean(traces.iter().map(|t| t.reward)),
        accuracy: mean(traces.iter().map(|t| f64::from(t.correctness))),
        mean_turns: mean(traces.iter().map(|t| t.actions.len() as f64)),
        mean_unit_tests: mean(counts.iter().map(|c| c.unit_tests as f64)),
        mean_code_attempts: mean(counts.iter().map(|c| c.code as f64)),
        patterns,
        codes_before_testing: mean(traces.iter().map(|t| f64::from(u8::from(codes_before_testing(t))))),
    })
}

/// Traces grouped by policy and rho. Keys are the bit patterns of the
/// non-negative rho values, which sort like the values themselves.
type RhoGroups<'a> = BTreeMap<String, BTreeMap<u64, Vec<&'a EpisodeTrace>>>;

fn group_by_rho(traces: &[EpisodeTrace]) -> Result<RhoGroups<'_>, CliError> {
    let mut groups: RhoGroups<'_> = BTreeMap::new();
    for t in traces {
        let rho = meta_or(t, "rho")?;
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(CliError::Argument(format!("trace {} has rho {rho}", t.task_id)));
        }
        // Normalize -0.0 so it shares a key with 0.0.
        let key = (rho + 0.0).to_bits();
        groups.entry(t.policy_name.clone()).or_default().entry(key).or_default().push(t);
    }
    Ok(groups)
}

fn pareto_points(groups: &RhoGroups<'_>, reference: &str) -> Vec<ParetoPoint> {
    let Some(reference_groups) = groups.get(reference) else {
        return Vec::new();
    };
    let rhos: BTreeSet<u64> = groups.values().flat_map(|g| g.keys().copied()).collect();
    let mut points = Vec::new();
    for key in rhos {
        let Some(ref_traces) = reference_groups.get(&key) else {
            continue;
        };
        let ref_rewards: BTreeMap<&str, f64> = ref_traces.iter().map(|t| (t.task_id.as_str(), t.reward)).collect();
        let means: BTreeMap<&str, f64> = groups
            .iter()
            .filter_map(|(p, g)| g.get(&key).map(|ts| (p.as_str(), mean(ts.iter().map(|t| t.reward)))))
            .collect();
        for (policy, g) in groups {
            let Some(ts) = g.get(&key) else {
                continue;
            };
            let paired: Vec<f64> = ts
                .iter()
                .filter_map(|t| ref_rewards.get(t.task_id.as_str()).map(|r| t.reward - r))
                .collect();
            let own = means[policy.as_str()];
            points.push(ParetoPoint {
                policy: policy.clone(),
                rho: f64::from_bits(key),
                mean_reward: own,
                delta_reward: mean(paired.iter().copied()),
                n_paired: paired.len(),
                dominated_by: means
                    .iter()
                    .filter(|(other, m)| **other != policy.as_str() && **m > own + DOMINANCE_EPS)
                    .map(|(other, _)| other.to_string())
                    .collect(),
            });
        }
    }
    points
}

/// Aggregates a set of traces from one environment. `reference` names the
/// baseline for reward deltas in the code environment; when it is `None` the
/// default baseline is used if present.
pub fn build_report(traces: &[EpisodeTrace], reference: Option<&str>) -> Result<ReportBundle, CliError> {
    let first = traces.first().ok_or_else(|| CliError::Argument("no traces to report on".into()))?;
    let env = first.env;
    if let Some(other) = traces.iter().find(|t| t.env != env) {
        return Err(CliError::Argument(format!(
            "mixed environments: {} trace {} alongside {env} traces",
            other.env, other.task_id
        )));
    }
    let mut seen = BTreeSet::new();
    for t in traces {
        if !seen.insert((t.task_id.as_str(), t.policy_name.as_str())) {
            return Err(CliError::Argument(format!("duplicate trace for {} under {}", t.task_id, t.policy_name)));
        }
    }
    let mut by_policy: BTreeMap<&str, Vec<&EpisodeTrace>> = BTreeMap::new();
    for t in traces {
        by_policy.entry(t.policy_name.as_str()).or_default().push(t);
    }
    let policies = by_policy
        .iter()
        .map(|(p, ts)| aggregate(env, p, ts))
        .collect::<Result<Vec<_>, _>>()?;

    let (mut per_rho, mut pareto, mut resolved) = (Vec::new(), Vec::new(), None);
    if env == EnvKind::Code {
        let groups = group_by_rho(traces)?;
        for (policy, g) in &groups {
            for (key, ts) in g {
                per_rho.push(rho_breakdown(policy, f64::from_bits(*key), ts)?);
            }
        }
        let name = match reference {
            Some(r) if !by_policy.contains_key(r) => {
                return Err(CliError::Argument(format!("reference policy '{r}' has no traces")));
            }
            Some(r) => Some(r),
            None => by_policy.contains_key(DEFAULT_REFERENCE).then_some(DEFAULT_REFERENCE),
        };
        if let Some(r) = name {
            pareto = pareto_points(&groups, r);
            resolved = Some(r.to_string());
        }
    } else if let Some(r) = reference {
        return Err(CliError::Argument(format!("reference policy '{r}' applies only to code traces")));
    }

    Ok(ReportBundle {
        schema: REPORT_SCHEMA.into(),
        env,
        n_traces: traces.len(),
        reference: resolved,
        policies,
        per_rho,
        pareto,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::Argument(format!("csv buffer: {e}")))
}

fn summary_csv(bundle: &ReportBundle) -> Result<Vec<u8>, CliError> {
    let header = [
        "policy",
        "n",
        "mean_reward",
        "accuracy",
        "mean_turns",
        "retrieve_pct",
        "threshold_agreement",
        "mean_unit_tests",
        "mean_code_attempts",
        "match_rate",
        "committed",
        "step_cap",
        "protocol_violation",
        "errored",
    ];
    csv_bytes(
        &header,
        bundle.policies.iter().map(|p| {
            vec![
                p.policy.clone(),
                p.n.to_string(),
                p.mean_reward.to_string(),
                p.accuracy.to_string(),
                p.mean_turns.to_string(),
                opt(p.retrieve_pct),
                opt(p.threshold_agreement),
                opt(p.mean_unit_tests),
                opt(p.mean_code_attempts),
                opt(p.match_rate),
                p.status.committed.to_string(),
                p.status.step_cap.to_string(),
                p.status.protocol_violation.to_string(),
                p.status.errored.to_string(),
            ]
        }),
    )
}

fn per_rho_csv(bundle: &ReportBundle) -> Result<Vec<u8>, CliError> {
    let mut header = vec![
        "policy",
        "rho",
        "n",
        "mean_reward",
        "accuracy",
        "mean_turns",
        "mean_unit_tests",
        "mean_code_attempts",
        "codes_before_testing",
    ];
    header.extend(ActionPattern::ALL.iter().map(|p| p.as_str()));
    csv_bytes(
        &header,
        bundle.per_rho.iter().map(|r| {
            let mut row = vec![
                r.policy.clone(),
                r.rho.to_string(),
                r.n.to_string(),
                r.mean_reward.to_string(),
                r.accuracy.to_string(),
                r.mean_turns.to_string(),
                r.mean_unit_tests.to_string(),
                r.mean_code_attempts.to_string(),
                r.codes_before_testing.to_string(),
            ];
            row.extend(ActionPattern::ALL.iter().map(|p| r.patterns[p.as_str()].to_string()));
            row
        }),
    )
}

fn pareto_csv(bundle: &ReportBundle) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &["policy", "rho", "mean_reward", "delta_reward", "n_paired", "dominated_by"],
        bundle.pareto.iter().map(|p| {
            vec![
                p.policy.clone(),
                p.rho.to_string(),
                p.mean_reward.to_string(),
                p.delta_reward.to_string(),
                p.n_paired.to_string(),
                p.dominated_by.join(";"),
            ]
        }),
    )
}

fn scatter_csv(rows: &[ScatterRow]) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &["task_id", "policy", "gamma", "k_hat", "p_ret", "boundary", "action", "threshold_action"],
        rows.iter().map(|r| {
            vec![
                r.task_id.clone(),
                r.policy.clone(),
                r.gamma.to_string(),
                r.k_hat.to_string(),
                r.p_ret.to_string(),
                r.boundary.to_string(),
                r.action.clone(),
                r.threshold_action.clone(),
            ]
        }),
    )
}

/// Writes the report files for `traces` into `out` and returns their paths.
pub fn write_report(traces: &[EpisodeTrace], bundle: &ReportBundle, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = vec![
        write_file(out, "report.json", &to_pretty_json(bundle))?,
        write_file(out, "summary.csv", &summary_csv(bundle)?)?,
    ];
    match bundle.env {
        EnvKind::Code => {
            written.push(write_file(out, "per_rho.csv", &per_rho_csv(bundle)?)?);
            written.push(write_file(out, "pareto.csv", &pareto_csv(bundle)?)?);
        }
        EnvKind::Qa => {
            written.push(write_file(out, "qa_scatter.csv", &scatter_csv(&qa_scatter(traces))?)?);
        }
        EnvKind::Pandora => {}
    }
    Ok(written)
}
