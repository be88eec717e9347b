//! Posterior over the 12 format triples.

use crate::episode::CoreError;
use crate::filereading::{Attribute, FormatPrior, FormatTriple};

/// Bit set over triple indices.
pub type Support = u16;

pub const FULL_SUPPORT: Support = (1 << FormatTriple::COUNT) - 1;

pub fn support_iter(mask: Support) -> impl Iterator<Item = FormatTriple> {
    (0..FormatTriple::COUNT)
        .filter(move |i| mask & (1 << i) != 0)
        .map(FormatTriple::from_index)
}

pub fn bit(z: FormatTriple) -> Support {
    1 << z.index()
}

/// Triples whose `attr` equals category `v`.
pub fn attribute_mask(attr: Attribute, v: usize) -> Support {
    FormatTriple::all()
        .filter(|z| z.value(attr) == v)
        .fold(0, |m, z| m | bit(z))
}

/// Distinct values `attr` takes on `mask`.
pub fn attribute_values(mask: Support, attr: Attribute) -> Vec<usize> {
    let mut vals: Vec<usize> = support_iter(mask).map(|z| z.value(attr)).collect();
    vals.sort_unstable();
    vals.dedup();
    vals
}

/// Prior weights restricted to a support.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBeliefSet {
    weights: [f64; FormatTriple::COUNT],
    support: Support,
}

impl CodeBeliefSet {
    pub fn from_prior(prior: &FormatPrior) -> Self {
        Self::from_weights(prior.joint())
    }

    /// Unnormalized weights; zero-weight triples stay in the support.
    pub fn from_weights(weights: [f64; FormatTriple::COUNT]) -> Self {
        CodeBeliefSet {
            weights,
            support: FULL_SUPPORT,
        }
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn weights(&self) -> &[f64; FormatTriple::COUNT] {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.support == 0
    }

    pub fn len(&self) -> usize {
        self.support.count_ones() as usize
    }

    pub fn prob(&self, z: FormatTriple) -> f64 {
        prob_in(&self.weights, self.support, z)
    }

    pub fn probs(&self) -> [f64; FormatTriple::COUNT] {
        std::array::from_fn(|i| self.prob(FormatTriple::from_index(i)))
    }

    pub fn marginal(&self, attr: Attribute) -> Vec<f64> {
        let mut m = vec![0.0; attr.cardinality()];
        for z in support_iter(self.support) {
            m[z.value(attr)] += self.prob(z);
        }
        m
    }

    /// Condition on `attr = v`.
    pub fn reveal(&mut self, attr: Attribute, v: usize) -> Result<(), CoreError> {
        self.restrict(attribute_mask(attr, v))
    }

    /// Condition on "the true triple is not `z`".
    pub fn rule_out(&mut self, z: FormatTriple) -> Result<(), CoreError> {
        self.restrict(!bit(z))
    }

    fn restrict(&mut self, mask: Support) -> Result<(), CoreError> {
        let next = self.support & mask;
        if next == 0 {
            return Err(CoreError::Contract(
                "observation contradicts every surviving triple".into(),
            ));
        }
        self.support = next;
        Ok(())
    }

    /// Attributes with more than one surviving value.
    pub fn undetermined(&self) -> Vec<Attribute> {
        Attribute::ALL
            .into_iter()
            .filter(|&a| attribute_values(self.support, a).len() > 1)
            .collect()
    }

    /// Most probable surviving triple; ties go to the lowest index.
    pub fn map(&self) -> FormatTriple {
        map_of(&self.weights, self.support)
    }

    /// Surviving triples by decreasing probability, ties by index.
    pub fn ranked(&self) -> Vec<FormatTriple> {
        let mut zs: Vec<FormatTriple> = support_iter(self.support).collect();
        zs.sort_by(|a, b| {
            self.weights[b.index()]
                .total_cmp(&self.weights[a.index()])
                .then(a.cmp(b))
        });
        zs
    }
}

pub(crate) fn mass(weights: &[f64; FormatTriple::COUNT], mask: Support) -> f64 {
    support_iter(mask).map(|z| weights[z.index()]).sum()
}

/// Renormalized probability of `z` on `mask`; uniform if the mask carries
/// no weight.
pub(crate) fn prob_in(weights: &[f64; FormatTriple::COUNT], mask: Support, z: FormatTriple) -> f64 {
    if mask & bit(z) == 0 {
        return 0.0;
    }
    let w = mass(weights, mask);
    if w > 0.0 {
        weights[z.index()] / w
    } else {
        1.0 / f64::from(mask.count_ones())
    }
}

pub(crate) fn map_of(weights: &[f64; FormatTriple::COUNT], mask: Support) -> FormatTriple {
    support_iter(mask)
        .fold(None::<FormatTriple>, |best, z| match best {
            Some(b) if weights[b.index()] >= weights[z.index()] => Some(b),
            _ => Some(z),
        })
        .expect("non-empty support")
}
