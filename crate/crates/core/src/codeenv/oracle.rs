//! Exact belief-state dynamic program for the code environment.
//!
//! The state is the surviving support over triples (revealed attributes are
//! encoded in it). A failed code attempt rules out exactly the attempted
//! triple; a unit test restricts the support to the revealed value; a
//! successful attempt yields the answer, after which answering is free.
//! Testing an attribute the support already determines is never useful and
//! is not considered.

use super::belief::{
    attribute_mask, attribute_values, bit, mass, support_iter, CodeBeliefSet, Support, FULL_SUPPORT,
};
use super::CodeAction;
use crate::filereading::{Attribute, FormatTriple};

/// Values within this distance count as tied.
const TIE_EPS: f64 = 1e-12;

pub struct CodeOracle {
    weights: [f64; FormatTriple::COUNT],
    d_u: f64,
    d_c: f64,
    /// Indexed by support mask.
    memo: Vec<Option<(f64, CodeAction)>>,
}

impl CodeOracle {
    pub fn new(belief: &CodeBeliefSet, d_u: f64, d_c: f64) -> Self {
        CodeOracle {
            weights: *belief.weights(),
            d_u,
            d_c,
            memo: vec![None; usize::from(FULL_SUPPORT) + 1],
        }
    }

    pub fn matches(&self, belief: &CodeBeliefSet, d_u: f64, d_c: f64) -> bool {
        self.weights == *belief.weights() && self.d_u == d_u && self.d_c == d_c
    }

    /// Optimal value and first action on `support`.
    pub fn solve(&mut self, support: Support) -> (f64, CodeAction) {
        assert!(support != 0, "oracle on an empty support");
        if let Some(hit) = &self.memo[usize::from(support)] {
            return hit.clone();
        }
        let mut best: Option<(f64, CodeAction)> = None;
        let consider = |value: f64, action: CodeAction, best: &mut Option<(f64, CodeAction)>| {
            if best.as_ref().is_none_or(|(v, _)| value > v + TIE_EPS) {
                *best = Some((value, action));
            }
        };

        let weights = self.weights;
        let total = mass(&weights, support);
        let n = f64::from(support.count_ones());
        let prob = |z: FormatTriple| {
            if total > 0.0 {
                weights[z.index()] / total
            } else {
                1.0 / n
            }
        };
        for z in support_iter(support) {
            let p = prob(z);
            let rest = support & !bit(z);
            let fail = if rest == 0 { 0.0 } else { self.solve(rest).0 };
            let value = self.d_c * (p + (1.0 - p) * fail);
            consider(value, CodeAction::Code(z), &mut best);
        }
        for attr in Attribute::ALL {
            let values = attribute_values(support, attr);
            if values.len() < 2 {
                continue;
            }
            let mut value = 0.0;
            for v in values {
                let sub = support & attribute_mask(attr, v);
                let pv: f64 = support_iter(sub).map(prob).sum();
                if pv > 0.0 {
                    value += pv * self.solve(sub).0;
                }
            }
            consider(
                self.d_u * value,
                CodeAction::UnitTests(vec![attr]),
                &mut best,
            );
        }
        let best = best.expect("support is non-empty");
        self.memo[usize::from(support)] = Some(best.clone());
        best
    }
}

/// Optimal value and first action for `belief`, before any answer is known.
pub fn oracle_value(belief: &CodeBeliefSet, d_u: f64, d_c: f64) -> (f64, CodeAction) {
    CodeOracle::new(belief, d_u, d_c).solve(belief.support())
}
