//! Belief-based policies for the code environment and exact evaluation.

use serde_json::Value;

use super::belief::{support_iter, CodeBeliefSet};
use super::oracle::CodeOracle;
use super::{CodeAction, CodeBackend, CodeContext, CodeEnv, CodeTask};
use crate::episode::{run_episode, Policy, PolicyError, Turn};
use crate::filereading::{Attribute, FormatTriple, QueryOp, QuerySpec};

/// What the history says about the belief, plus the answer if a code
/// attempt succeeded. Failed attempts rule out only the attempted triple.
pub fn belief_from_history(
    initial: &CodeBeliefSet,
    history: &[Turn<CodeAction>],
) -> Result<(CodeBeliefSet, Option<String>), PolicyError> {
    let mut belief = initial.clone();
    let mut answer = None;
    let contradiction = |e: crate::episode::CoreError| PolicyError::Malformed(e.to_string());
    for turn in history {
        let s = &turn.observation.structured;
        match &turn.action {
            CodeAction::UnitTests(_) => {
                for r in s
                    .get("results")
                    .and_then(Value::as_array)
                    .into_iter()
                    .flatten()
                {
                    let attr = r
                        .get("attribute")
                        .and_then(Value::as_str)
                        .and_then(Attribute::from_param_name);
                    let value = r.get("value").and_then(Value::as_u64);
                    if let (Some(a), Some(v)) = (attr, value) {
                        belief.reveal(a, v as usize).map_err(contradiction)?;
                    }
                }
            }
            CodeAction::Code(z) => {
                if s.get("success").and_then(Value::as_bool) == Some(true) {
                    answer = s
                        .get("stdout")
                        .and_then(Value::as_str)
                        .map(|o| o.trim().to_string());
                } else if belief.len() > 1 {
                    belief.rule_out(*z).map_err(contradiction)?;
                }
            }
            CodeAction::Answer(_) => {}
        }
    }
    Ok((belief, answer))
}

/// Plays the dynamic-programming optimum on the current belief.
#[derive(Default)]
pub struct OracleCodePolicy {
    cache: Option<CodeOracle>,
}

impl OracleCodePolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy<CodeEnv> for OracleCodePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn next_action(
        &mut self,
        ctx: &CodeContext,
        history: &[Turn<CodeAction>],
    ) -> Result<CodeAction, PolicyError> {
        let (belief, answer) = belief_from_history(&ctx.initial_belief, history)?;
        if let Some(a) = answer {
            return Ok(CodeAction::Answer(a));
        }
        let reuse = self
            .cache
            .as_ref()
            .is_some_and(|o| o.matches(&belief, ctx.d_u, ctx.d_c));
        if !reuse {
            self.cache = Some(CodeOracle::new(&belief, ctx.d_u, ctx.d_c));
        }
        let oracle = self.cache.as_mut().expect("set above");
        Ok(oracle.solve(belief.support()).1)
    }
}

/// One `UNIT_TESTS` action over the first `k` attributes, then code the MAP
/// triple, re-coding the next most likely triple after failures.
#[derive(Debug, Clone)]
pub struct TestsThenCode {
    pub k: usize,
}

impl Policy<CodeEnv> for TestsThenCode {
    fn name(&self) -> String {
        format!("tests_then_code_{}", self.k)
    }

    fn next_action(
        &mut self,
        ctx: &CodeContext,
        history: &[Turn<CodeAction>],
    ) -> Result<CodeAction, PolicyError> {
        let (belief, answer) = belief_from_history(&ctx.initial_belief, history)?;
        if let Some(a) = answer {
            return Ok(CodeAction::Answer(a));
        }
        let k = self.k.min(Attribute::ALL.len());
        if history.is_empty() && k > 0 {
            return Ok(CodeAction::UnitTests(Attribute::ALL[..k].to_vec()));
        }
        Ok(CodeAction::Code(belief.map()))
    }
}

/// Code the MAP triple; after a failure test every undetermined attribute
/// once, then code again.
#[derive(Debug, Default, Clone)]
pub struct CodeFirst;

impl Policy<CodeEnv> for CodeFirst {
    fn name(&self) -> String {
        "code_first".into()
    }

    fn next_action(
        &mut self,
        ctx: &CodeContext,
        history: &[Turn<CodeAction>],
    ) -> Result<CodeAction, PolicyError> {
        let (belief, answer) = belief_from_history(&ctx.initial_belief, history)?;
        if let Some(a) = answer {
            return Ok(CodeAction::Answer(a));
        }
        let tested = history
            .iter()
            .any(|t| matches!(t.action, CodeAction::UnitTests(_)));
        let undetermined = belief.undetermined();
        if !history.is_empty() && !tested && !undetermined.is_empty() {
            return Ok(CodeAction::UnitTests(undetermined));
        }
        Ok(CodeAction::Code(belief.map()))
    }
}

/// Code triples in decreasing probability order until one succeeds.
#[derive(Debug, Default, Clone)]
pub struct MapGreedy;

impl Policy<CodeEnv> for MapGreedy {
    fn name(&self) -> String {
        "map_greedy".into()
    }

    fn next_action(
        &mut self,
        ctx: &CodeContext,
        history: &[Turn<CodeAction>],
    ) -> Result<CodeAction, PolicyError> {
        let (belief, answer) = belief_from_history(&ctx.initial_belief, history)?;
        if let Some(a) = answer {
            return Ok(CodeAction::Answer(a));
        }
        Ok(CodeAction::Code(belief.map()))
    }
}

/// `sum_i p_(i) d_c^i` over probabilities sorted in decreasing order.
pub fn map_greedy_expected_reward(belief: &CodeBeliefSet, d_c: f64) -> f64 {
    belief
        .ranked()
        .iter()
        .enumerate()
        .map(|(i, z)| belief.prob(*z) * d_c.powi(i as i32 + 1))
        .sum()
}

/// Exact expected reward of a policy: one latent-backend episode per
/// surviving true triple, weighted by its probability.
pub fn exact_expected_reward<P, F>(
    make: F,
    belief: &CodeBeliefSet,
    d_u: f64,
    d_c: f64,
) -> Result<f64, crate::CoreError>
where
    P: Policy<CodeEnv>,
    F: Fn() -> P,
{
    let mut total = 0.0;
    for z in support_iter(belief.support()) {
        let p = belief.prob(z);
        if p == 0.0 {
            continue;
        }
        let task = latent_task(z, d_u, d_c);
        let mut env = CodeEnv::with_belief(task, belief.clone())?;
        let trace = run_episode(&mut env, &mut make(), crate::DEFAULT_MAX_STEPS)?;
        total += p * trace.reward;
    }
    Ok(total)
}

fn latent_task(truth: FormatTriple, d_u: f64, d_c: f64) -> CodeTask {
    CodeTask {
        task_id: format!("latent-{}", truth.index()),
        seed: 0,
        filename: "latent.csv".into(),
        query: QuerySpec {
            op: QueryOp::Max,
            target_column: "value".into(),
            by_column: None,
        },
        gold_answer: "42".into(),
        true_format: truth,
        d_u,
        d_c,
        rho: if d_u < 1.0 { d_c.ln() / d_u.ln() } else { 1.0 },
        prior: None,
        backend: CodeBackend::Latent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codeenv::belief::bit;
    use crate::codeenv::oracle::oracle_value;
    use crate::filereading::{FilenameFeatures, OracleFormatModel};

    fn belief() -> CodeBeliefSet {
        CodeBeliefSet::from_prior(&OracleFormatModel::default().prior(FilenameFeatures {
            has_eu: true,
            ..Default::default()
        }))
    }

    #[test]
    fn tests_then_code_3_reward_is_fixed() {
        let b = belief();
        let r = exact_expected_reward(|| TestsThenCode { k: 3 }, &b, 0.8, 0.5).unwrap();
        assert!((r - 0.8f64.powi(3) * 0.5).abs() < 1e-12);
    }

    #[test]
    fn code_first_with_certain_map() {
        let z = FormatTriple::from_index(3);
        let b = CodeBeliefSet::from_weights([1.0; 12]).with_support(bit(z));
        let r = exact_expected_reward(|| CodeFirst, &b, 0.8, 0.6).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
    }

    #[test]
    fn map_greedy_closed_form() {
        let b = belief();
        let exact = exact_expected_reward(|| MapGreedy, &b, 0.9, 0.7).unwrap();
        assert!((exact - map_greedy_expected_reward(&b, 0.7)).abs() < 1e-12);
    }

    #[test]
    fn oracle_policy_realizes_oracle_value() {
        let b = belief();
        for (d_u, d_c) in [(0.9, 0.95), (0.9, 0.6561), (0.6, 0.36), (1.0, 0.5)] {
            let r = exact_expected_reward(OracleCodePolicy::new, &b, d_u, d_c).unwrap();
            let (v, _) = oracle_value(&b, d_u, d_c);
            assert!((r - v).abs() < 1e-9, "{d_u} {d_c}: {r} vs {v}");
        }
    }
}
