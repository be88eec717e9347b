//! Discounted Pandora's box: K boxes, one prize, known priors.
//!
//! Verifying a box reveals whether it holds the prize and multiplies the
//! eventual reward by `gamma`; guessing ends the episode. The optimal policy
//! always inspects the highest-posterior surviving box, so its value follows a
//! one-dimensional recursion over the surviving set ([`oracle_solve`]). An
//! independent exhaustive enumeration ([`brute_force_value`]) checks it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::episode::{
    powu, ActionKind, CoreError, EnvAction, EnvError, EnvKind, Environment, EpisodeStatus,
    EpisodeTrace, Observation, Outcome, Policy, PolicyError, Step, Turn,
};
use crate::rng::{derive_seed, stream_rng};

/// Discount factors agents are evaluated on.
pub const DEFAULT_GAMMA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_K: usize = 3;

/// Largest K accepted by [`brute_force_value`].
pub const BRUTE_FORCE_MAX_K: usize = 6;

/// Slack used when comparing guess and verify values, so rounding noise does
/// not flip an exact tie away from Commit.
const TIE_EPS: f64 = 1e-12;

const PRIOR_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PandoraInstance {
    pub task_id: String,
    pub labels: Vec<String>,
    pub priors: Vec<f64>,
    pub gamma: f64,
    /// 1-based index of the box holding the prize.
    pub prize_index: usize,
    pub seed: u64,
}

impl PandoraInstance {
    pub fn new(
        task_id: impl Into<String>,
        priors: Vec<f64>,
        gamma: f64,
        prize_index: usize,
        seed: u64,
    ) -> Result<Self, CoreError> {
        let inst = PandoraInstance {
            task_id: task_id.into(),
            labels: default_labels(priors.len())?,
            priors,
            gamma,
            prize_index,
            seed,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let k = self.priors.len();
        if k == 0 {
            return Err(CoreError::InvalidArgument(
                "instance needs at least one box".into(),
            ));
        }
        if self.labels.len() != k {
            return Err(CoreError::InvalidArgument(
                "labels and priors differ in length".into(),
            ));
        }
        let mut sorted = self.labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != k {
            return Err(CoreError::InvalidArgument(
                "box labels must be distinct".into(),
            ));
        }
        validate_priors(&self.priors)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CoreError::InvalidArgument(format!(
                "gamma {} outside [0,1]",
                self.gamma
            )));
        }
        if self.prize_index == 0 || self.prize_index > k {
            return Err(CoreError::InvalidArgument(format!(
                "prize_index {} outside 1..={k}",
                self.prize_index
            )));
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Replicate of the instance with the prize redrawn from the priors under
    /// another seed. Priors and gamma are unchanged.
    pub fn replicate(&self, seed: u64) -> Self {
        let task_id = format!("{}#s{seed}", self.task_id);
        let mut rng = stream_rng(seed, &format!("{task_id}/prize"));
        let u: f64 = rng.random();
        PandoraInstance {
            prize_index: sample_categorical(&self.priors, u) + 1,
            seed: derive_seed(seed, &task_id),
            task_id,
            ..self.clone()
        }
    }

    /// Expected discounted reward of the oracle from the initial state.
    pub fn oracle_value(&self) -> f64 {
        let all: Vec<usize> = (0..self.k()).collect();
        oracle_solve(&self.priors, &all, self.gamma)
            .expect("validated instance")
            .value
    }
}

fn validate_priors(priors: &[f64]) -> Result<(), CoreError> {
    if priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(CoreError::InvalidArgument(
            "priors must be non-negative".into(),
        ));
    }
    let sum: f64 = priors.iter().sum();
    if (sum - 1.0).abs() > PRIOR_SUM_TOL {
        return Err(CoreError::InvalidArgument(format!(
            "priors sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// "A", "B", ... for up to 26 boxes.
pub fn default_labels(k: usize) -> Result<Vec<String>, CoreError> {
    if k == 0 || k > 26 {
        return Err(CoreError::InvalidArgument(format!(
            "box count {k} outside 1..=26"
        )));
    }
    Ok((0..k)
        .map(|i| char::from(b'A' + i as u8).to_string())
        .collect())
}

/// Surviving boxes and their renormalized posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    priors: Vec<f64>,
    surviving: Vec<usize>,
}

impl BeliefState {
    pub fn new(priors: &[f64]) -> Self {
        BeliefState {
            priors: priors.to_vec(),
            surviving: (0..priors.len()).collect(),
        }
    }

    pub fn surviving(&self) -> &[usize] {
        &self.surviving
    }

    /// Posterior of box `i`; zero for eliminated boxes.
    pub fn posterior(&self, i: usize) -> f64 {
        if !self.surviving.contains(&i) {
            return 0.0;
        }
        posterior_over(&self.priors, &self.surviving, i)
    }

    pub fn posteriors(&self) -> Vec<f64> {
        (0..self.priors.len()).map(|i| self.posterior(i)).collect()
    }

    /// Condition on "box `i` is empty".
    pub fn condition_no(&mut self, i: usize) {
        self.surviving.retain(|&j| j != i);
    }
}

fn posterior_over(priors: &[f64], surviving: &[usize], i: usize) -> f64 {
    let w: f64 = surviving.iter().map(|&j| priors[j]).sum();
    if w > 0.0 {
        priors[i] / w
    } else {
        // Every survivor had zero prior mass; conditioning leaves them uniform.
        1.0 / surviving.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PandoraAction {
    /// 0-based box index.
    Verify(usize),
    /// 0-based box index.
    Commit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDecision {
    pub value: f64,
    pub action: PandoraAction,
    pub v_guess: f64,
    pub v_verify: f64,
}

/// Highest-prior survivor; ties go to the lowest index.
fn best_box(priors: &[f64], surviving: &[usize]) -> usize {
    let mut best = surviving[0];
    for &i in &surviving[1..] {
        if priors[i] > priors[best] || (priors[i] == priors[best] && i < best) {
            best = i;
        }
    }
    best
}

/// Optimal decision for the surviving set `surviving` (0-based indices into
/// `priors`, which need not be normalized over it).
pub fn oracle_solve(
    priors: &[f64],
    surviving: &[usize],
    gamma: f64,
) -> Result<OracleDecision, CoreError> {
    if surviving.is_empty() {
        return Err(CoreError::Contract(
            "oracle_solve on an empty surviving set".into(),
        ));
    }
    if let Some(&bad) = surviving.iter().find(|&&i| i >= priors.len()) {
        return Err(CoreError::Contract(format!("box index {bad} out of range")));
    }
    let mut order: Vec<usize> = surviving.to_vec();
    order.sort_unstable();
    order.dedup();
    // Inspect boxes in decreasing-prior order; solve from the last one back.
    order.sort_by(|&a, &b| priors[b].total_cmp(&priors[a]).then(a.cmp(&b)));
    let last = *order.last().expect("non-empty");
    let mut decision = OracleDecision {
        value: 1.0,
        action: PandoraAction::Commit(last),
        v_guess: 1.0,
        v_verify: gamma,
    };
    for n in (0..order.len() - 1).rev() {
        let set = &order[n..];
        let head = order[n];
        debug_assert_eq!(head, best_box(priors, set));
        let q = posterior_over(priors, set, head);
        let v_guess = q;
        let v_verify = gamma * (q + (1.0 - q) * decision.value);
        decision = if v_guess >= v_verify - TIE_EPS {
            OracleDecision {
                value: v_guess,
                action: PandoraAction::Commit(head),
                v_guess,
                v_verify,
            }
        } else {
            OracleDecision {
                value: v_verify,
                action: PandoraAction::Verify(head),
                v_guess,
                v_verify,
            }
        };
    }
    Ok(decision)
}

/// Result of exhaustive policy enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForce {
    pub value: f64,
    /// First action of an optimal policy under the oracle's tie rule.
    pub first_action: PandoraAction,
}

/// Exhaustively evaluates every deterministic policy on `priors`.
///
/// A policy is an ordered list of distinct boxes to verify (each one only if
/// all earlier ones said NO) followed by a box to guess when every
/// verification failed. A YES is always followed by guessing that box.
pub fn brute_force(priors: &[f64], gamma: f64) -> Result<BruteForce, CoreError> {
    let k = priors.len();
    if k == 0 {
        return Err(CoreError::InvalidArgument("no boxes".into()));
    }
    if k > BRUTE_FORCE_MAX_K {
        return Err(CoreError::InvalidArgument(format!(
            "brute force limited to K <= {BRUTE_FORCE_MAX_K}"
        )));
    }
    let total: f64 = priors.iter().sum();
    let p: Vec<f64> = if total > 0.0 {
        priors.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };

    let mut best_commit: Option<(f64, usize)> = None;
    let mut best_verify: Vec<(f64, usize)> = Vec::new();
    let mut prefix = Vec::with_capacity(k);
    let mut used = vec![false; k];
    enumerate(
        &p,
        gamma,
        &mut prefix,
        &mut used,
        &mut best_commit,
        &mut best_verify,
    );

    let (commit_value, commit_box) = best_commit.expect("at least one commit policy");
    let verify_value = best_verify
        .iter()
        .map(|v| v.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if commit_value >= verify_value - TIE_EPS {
        return Ok(BruteForce {
            value: commit_value.max(verify_value),
            first_action: PandoraAction::Commit(commit_box),
        });
    }
    let first = best_verify
        .iter()
        .filter(|(v, _)| *v >= verify_value - TIE_EPS)
        .map(|&(_, i)| i)
        .min_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)))
        .expect("non-empty");
    Ok(BruteForce {
        value: verify_value,
        first_action: PandoraAction::Verify(first),
    })
}

fn enumerate(
    p: &[f64],
    gamma: f64,
    prefix: &mut Vec<usize>,
    used: &mut [bool],
    best_commit: &mut Option<(f64, usize)>,
    best_verify: &mut Vec<(f64, usize)>,
) {
    let m = prefix.len();
    let verified: f64 = prefix
        .iter()
        .enumerate()
        .map(|(j, &b)| powu(gamma, j + 1) * p[b])
        .sum();
    let mut record = |value: f64| {
        if let Some(&first) = prefix.first() {
            match best_verify.iter_mut().find(|(_, i)| *i == first) {
                Some(slot) => slot.0 = slot.0.max(value),
                None => best_verify.push((value, first)),
            }
        }
    };
    if m == p.len() {
        record(verified);
        return;
    }
    for c in 0..p.len() {
        if used[c] {
            continue;
        }
        let value = verified + powu(gamma, m) * p[c];
        if m == 0 {
            let better = match *best_commit {
                None => true,
                Some((v, _)) => value > v + TIE_EPS,
            };
            if better {
                *best_commit = Some((value, c));
            }
        } else {
            record(value);
        }
    }
    for b in 0..p.len() {
        if used[b] {
            continue;
        }
        used[b] = true;
        prefix.push(b);
        enumerate(p, gamma, prefix, used, best_commit, best_verify);
        prefix.pop();
        used[b] = false;
    }
}

/// Optimal expected value by exhaustive enumeration (K <= 6).
pub fn brute_force_value(priors: &[f64], gamma: f64) -> Result<f64, CoreError> {
    brute_force(priors, gamma).map(|b| b.value)
}

/// Samples priors ~ Dirichlet(alpha), gamma uniform over `gamma_grid` and the
/// prize from the priors, all from the stream keyed by `task_id`.
///
/// Dirichlet draws are K independent Gamma(alpha, 1) variates normalized by
/// their sum, drawn in box order.
pub fn sample_instance(
    k: usize,
    alpha: f64,
    gamma_grid: &[f64],
    task_id: &str,
    seed: u64,
) -> Result<PandoraInstance, CoreError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CoreError::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if gamma_grid.is_empty() || gamma_grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(CoreError::InvalidArgument(
            "gamma grid must be non-empty with values in [0,1]".into(),
        ));
    }
    let labels = default_labels(k)?;
    let mut rng = stream_rng(seed, task_id);
    let gamma_dist =
        Gamma::new(alpha, 1.0).map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
    let priors = loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma_dist.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            break draws.into_iter().map(|x| x / sum).collect::<Vec<_>>();
        }
    };
    let gamma = gamma_grid[rng.random_range(0..gamma_grid.len())];
    let u: f64 = rng.random();
    let prize_index = sample_categorical(&priors, u) + 1;
    Ok(PandoraInstance {
        task_id: task_id.to_string(),
        labels,
        priors,
        gamma,
        prize_index,
        seed: derive_seed(seed, task_id),
    })
}

/// Inverse-CDF draw with a uniform `u` in [0,1).
pub(crate) fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(probs.len() - 1)
}

pub fn task_id(i: usize) -> String {
    format!("pandora-{i:05}")
}

pub fn sample_dataset(
    n: usize,
    k: usize,
    alpha: f64,
    gamma_grid: &[f64],
    seed: u64,
) -> Result<Vec<PandoraInstance>, CoreError> {
    (0..n)
        .map(|i| sample_instance(k, alpha, gamma_grid, &task_id(i), seed))
        .collect()
}

/// Mean oracle expected value over freshly sampled instances.
pub fn population_oracle_value(
    n: usize,
    k: usize,
    alpha: f64,
    gamma_grid: &[f64],
    seed: u64,
) -> Result<f64, CoreError> {
    if n == 0 {
        return Err(CoreError::InvalidArgument(
            "need at least one instance".into(),
        ));
    }
    let instances = sample_dataset(n, k, alpha, gamma_grid, seed)?;
    Ok(instances
        .iter()
        .map(PandoraInstance::oracle_value)
        .sum::<f64>()
        / n as f64)
}

/// Step cap that leaves the oracle room to verify every box.
pub fn step_cap(k: usize) -> usize {
    crate::DEFAULT_MAX_STEPS.max(k + 1)
}

// ---------------------------------------------------------------------------
// Environment

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyResult {
    Yes,
    No,
}

/// Agent-facing view of an instance (no prize location).
#[derive(Debug, Clone, PartialEq)]
pub struct PandoraContext {
    pub task_id: String,
    pub labels: Vec<String>,
    pub priors: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAction {
    pub action: PandoraAction,
    pub label: String,
}

impl EnvAction for LabeledAction {
    fn kind(&self) -> ActionKind {
        match self.action {
            PandoraAction::Verify(_) => ActionKind::Explore,
            PandoraAction::Commit(_) => ActionKind::Commit,
        }
    }

    fn label(&self) -> String {
        match self.action {
            PandoraAction::Verify(_) => format!("VERIFY {}", self.label),
            PandoraAction::Commit(_) => format!("GUESS {}", self.label),
        }
    }

    fn payload(&self) -> Value {
        json!({ "box": self.label })
    }
}

impl PandoraContext {
    pub fn action(&self, action: PandoraAction) -> LabeledAction {
        let i = match action {
            PandoraAction::Verify(i) | PandoraAction::Commit(i) => i,
        };
        LabeledAction {
            action,
            label: self.labels[i].clone(),
        }
    }
}

pub fn verification_text(label: &str, result: VerifyResult) -> String {
    match result {
        VerifyResult::No => {
            format!("The verification result is: NO, {label} is incorrect. Given this, please provide your next action.")
        }
        VerifyResult::Yes => {
            format!("The verification result is: YES, {label} is correct. Given this, please provide your next action.")
        }
    }
}

pub struct PandoraEnv {
    instance: PandoraInstance,
    context: PandoraContext,
    verifies: usize,
    done: bool,
}

impl PandoraEnv {
    pub fn new(instance: PandoraInstance) -> Result<Self, CoreError> {
        instance.validate()?;
        let context = PandoraContext {
            task_id: instance.task_id.clone(),
            labels: instance.labels.clone(),
            priors: instance.priors.clone(),
            gamma: instance.gamma,
        };
        Ok(PandoraEnv {
            instance,
            context,
            verifies: 0,
            done: false,
        })
    }

    pub fn instance(&self) -> &PandoraInstance {
        &self.instance
    }
}

impl Environment for PandoraEnv {
    type Action = LabeledAction;
    type Context = PandoraContext;

    fn kind(&self) -> EnvKind {
        EnvKind::Pandora
    }

    fn task_id(&self) -> &str {
        &self.instance.task_id
    }

    fn seed(&self) -> u64 {
        self.instance.seed
    }

    fn context(&self) -> &PandoraContext {
        &self.context
    }

    fn step(&mut self, action: &LabeledAction) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        let index = match action.action {
            PandoraAction::Verify(i) | PandoraAction::Commit(i) => i,
        };
        if index >= self.instance.k() {
            return Err(EnvError::Protocol(format!("no box with index {index}")));
        }
        let label = &self.instance.labels[index];
        let prize = self.instance.prize_index - 1;
        match action.action {
            PandoraAction::Verify(i) => {
                self.verifies += 1;
                let result = if i == prize {
                    VerifyResult::Yes
                } else {
                    VerifyResult::No
                };
                Ok(Step::Observe(Observation {
                    text: verification_text(label, result),
                    structured: json!({ "box": label, "result": if result == VerifyResult::Yes { "YES" } else { "NO" } }),
                }))
            }
            PandoraAction::Commit(i) => {
                self.done = true;
                Ok(Step::Done(Outcome {
                    answer: label.clone(),
                    correct: i == prize,
                    discount: self.discount_so_far(),
                }))
            }
        }
    }

    fn discount_so_far(&self) -> f64 {
        powu(self.instance.gamma, self.verifies)
    }

    fn meta(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("gamma".to_string(), json!(self.instance.gamma)),
            ("k".to_string(), json!(self.instance.k())),
            ("labels".to_string(), json!(self.instance.labels)),
            ("priors".to_string(), json!(self.instance.priors)),
            (
                "oracle_value".to_string(),
                json!(self.instance.oracle_value()),
            ),
        ])
    }
}

/// Belief implied by a history of verifications. Returns the box that said
/// YES, if any.
fn belief_from_history(
    priors: &[f64],
    history: &[(PandoraAction, Option<VerifyResult>)],
) -> (BeliefState, Option<usize>) {
    let mut belief = BeliefState::new(priors);
    for (action, result) in history {
        if let (PandoraAction::Verify(i), Some(r)) = (action, result) {
            match r {
                VerifyResult::Yes => return (belief, Some(*i)),
                VerifyResult::No => belief.condition_no(*i),
            }
        }
    }
    (belief, None)
}

/// The oracle's action after `history`.
pub fn oracle_action(
    priors: &[f64],
    gamma: f64,
    history: &[(PandoraAction, Option<VerifyResult>)],
) -> Result<PandoraAction, CoreError> {
    let (belief, yes) = belief_from_history(priors, history);
    if let Some(i) = yes {
        return Ok(PandoraAction::Commit(i));
    }
    if belief.surviving().is_empty() {
        return Err(CoreError::Contract("every box was ruled out".into()));
    }
    Ok(oracle_solve(priors, belief.surviving(), gamma)?.action)
}

fn parse_result(obs: &Observation) -> Option<VerifyResult> {
    match obs.structured.get("result").and_then(Value::as_str) {
        Some("YES") => Some(VerifyResult::Yes),
        Some("NO") => Some(VerifyResult::No),
        _ => None,
    }
}

/// Policy that plays [`oracle_solve`] on the current belief.
#[derive(Debug, Default, Clone)]
pub struct OraclePolicy;

impl Policy<PandoraEnv> for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn next_action(
        &mut self,
        ctx: &PandoraContext,
        history: &[Turn<LabeledAction>],
    ) -> Result<LabeledAction, PolicyError> {
        let past: Vec<_> = history
            .iter()
            .map(|t| (t.action.action, parse_result(&t.observation)))
            .collect();
        let action = oracle_action(&ctx.priors, ctx.gamma, &past)
            .map_err(|e| PolicyError::Malformed(e.to_string()))?;
        Ok(ctx.action(action))
    }
}

/// Commits to a fixed box immediately.
#[derive(Debug, Clone)]
pub struct FixedGuessPolicy(pub usize);

impl Policy<PandoraEnv> for FixedGuessPolicy {
    fn name(&self) -> String {
        format!("guess_{}", self.0)
    }

    fn next_action(
        &mut self,
        ctx: &PandoraContext,
        _: &[Turn<LabeledAction>],
    ) -> Result<LabeledAction, PolicyError> {
        Ok(ctx.action(PandoraAction::Commit(self.0.min(ctx.labels.len() - 1))))
    }
}

/// Verifies boxes in decreasing prior order and guesses the last survivor.
#[derive(Debug, Default, Clone)]
pub struct VerifyAllPolicy;

impl Policy<PandoraEnv> for VerifyAllPolicy {
    fn name(&self) -> String {
        "verify_all".into()
    }

    fn next_action(
        &mut self,
        ctx: &PandoraContext,
        history: &[Turn<LabeledAction>],
    ) -> Result<LabeledAction, PolicyError> {
        let past: Vec<_> = history
            .iter()
            .map(|t| (t.action.action, parse_result(&t.observation)))
            .collect();
        let (belief, yes) = belief_from_history(&ctx.priors, &past);
        if let Some(i) = yes {
            return Ok(ctx.action(PandoraAction::Commit(i)));
        }
        let s = belief.surviving();
        let next = best_box(&ctx.priors, s);
        Ok(ctx.action(if s.len() == 1 {
            PandoraAction::Commit(next)
        } else {
            PandoraAction::Verify(next)
        }))
    }
}

fn action_from_label(label: &str, labels: &[String]) -> Option<PandoraAction> {
    let (verb, name) = label.split_once(' ')?;
    let i = labels.iter().position(|l| l == name)?;
    match verb {
        "VERIFY" => Some(PandoraAction::Verify(i)),
        "GUESS" => Some(PandoraAction::Commit(i)),
        _ => None,
    }
}

/// Fraction of episodes where every action equals the oracle's action on the
/// same history. Errored episodes are left out of the denominator.
pub fn optimal_match_rate(
    traces: &[EpisodeTrace],
    instances: &[PandoraInstance],
) -> Result<f64, CoreError> {
    let by_id: BTreeMap<&str, &PandoraInstance> =
        instances.iter().map(|i| (i.task_id.as_str(), i)).collect();
    let mut matched = 0usize;
    let mut total = 0usize;
    for trace in traces {
        if trace.env != EnvKind::Pandora {
            return Err(CoreError::Contract(format!(
                "{} is not a pandora trace",
                trace.task_id
            )));
        }
        let inst = by_id.get(trace.task_id.as_str()).ok_or_else(|| {
            CoreError::Contract(format!("no instance for trace {}", trace.task_id))
        })?;
        if trace.status == EpisodeStatus::Errored {
            continue;
        }
        total += 1;
        if trace_matches_oracle(trace, &inst.priors, &inst.labels, inst.gamma)? {
            matched += 1;
        }
    }
    if total == 0 {
        return Err(CoreError::InvalidArgument("no scorable traces".into()));
    }
    Ok(matched as f64 / total as f64)
}

fn trace_matches_oracle(
    trace: &EpisodeTrace,
    priors: &[f64],
    labels: &[String],
    gamma: f64,
) -> Result<bool, CoreError> {
    let observed: BTreeMap<usize, Option<VerifyResult>> = trace
        .observations
        .iter()
        .map(|o| {
            let r = match o.structured.get("result").and_then(Value::as_str) {
                Some("YES") => Some(VerifyResult::Yes),
                Some("NO") => Some(VerifyResult::No),
                _ => None,
            };
            (o.step_index, r)
        })
        .collect();
    let mut history = Vec::new();
    for record in &trace.actions {
        let Some(taken) = action_from_label(&record.label, labels) else {
            return Ok(false);
        };
        if taken != oracle_action(priors, gamma, &history)? {
            return Ok(false);
        }
        if record.kind == ActionKind::Commit {
            return Ok(true);
        }
        history.push((taken, observed.get(&record.step_index).copied().flatten()));
    }
    Ok(false)
}

/// Whether a trace follows the oracle, using only the priors, labels and
/// gamma recorded in its meta.
pub fn trace_follows_oracle(trace: &EpisodeTrace) -> Result<bool, CoreError> {
    if trace.env != EnvKind::Pandora {
        return Err(CoreError::Contract(format!(
            "{} is not a pandora trace",
            trace.task_id
        )));
    }
    let missing = |key: &str| CoreError::Contract(format!("{}: meta lacks {key}", trace.task_id));
    let priors: Vec<f64> = trace
        .meta
        .get("priors")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| missing("priors"))?;
    let labels: Vec<String> = trace
        .meta
        .get("labels")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| missing("labels"))?;
    let gamma = trace.meta_f64("gamma").ok_or_else(|| missing("gamma"))?;
    validate_priors(&priors)?;
    if labels.len() != priors.len() {
        return Err(CoreError::Contract(format!(
            "{}: labels and priors differ in length",
            trace.task_id
        )));
    }
    trace_matches_oracle(trace, &priors, &labels, gamma)
}
