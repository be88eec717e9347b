//! Tabular filename-to-format estimator: Laplace-smoothed attribute
//! frequencies per filename feature configuration.

use serde::{Deserialize, Serialize};

use super::format::{Attribute, FilenameFeatures, FormatPrior, FormatTriple, OracleFormatModel};
use crate::episode::CoreError;

pub const DEFAULT_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedPriorModel {
    pub smoothing: f64,
    /// `counts[config][attribute][category]`
    pub counts: Vec<[Vec<f64>; 3]>,
}

impl EstimatedPriorModel {
    pub fn predict(&self, features: FilenameFeatures) -> FormatPrior {
        let c = &self.counts[features.index()];
        FormatPrior {
            marginals: Attribute::ALL.map(|a| {
                let row = &c[a.index()];
                let total: f64 = row.iter().sum::<f64>() + self.smoothing * row.len() as f64;
                row.iter().map(|n| (n + self.smoothing) / total).collect()
            }),
        }
    }

    pub fn predict_filename(&self, filename: &str) -> FormatPrior {
        self.predict(FilenameFeatures::from_filename(filename))
    }
}

/// Fits the estimator on `(filename features, true format)` pairs.
pub fn fit_prior_estimator(
    examples: &[(FilenameFeatures, FormatTriple)],
    smoothing: f64,
) -> Result<EstimatedPriorModel, CoreError> {
    if examples.is_empty() {
        return Err(CoreError::InvalidArgument("empty training set".into()));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "smoothing must be positive".into(),
        ));
    }
    let mut counts: Vec<[Vec<f64>; 3]> = (0..FilenameFeatures::COUNT)
        .map(|_| Attribute::ALL.map(|a| vec![0.0; a.cardinality()]))
        .collect();
    for (f, z) in examples {
        for a in Attribute::ALL {
            counts[f.index()][a.index()][z.value(a)] += 1.0;
        }
    }
    Ok(EstimatedPriorModel { smoothing, counts })
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

/// Mean over examples and attributes of "argmax of predicted marginal equals
/// the true value".
pub fn attribute_accuracy(
    model: &EstimatedPriorModel,
    examples: &[(FilenameFeatures, FormatTriple)],
) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits: usize = examples
        .iter()
        .map(|(f, z)| {
            let p = model.predict(*f);
            Attribute::ALL
                .iter()
                .filter(|&&a| argmax(p.marginal(a)) == z.value(a))
                .count()
        })
        .sum();
    hits as f64 / (3 * examples.len()) as f64
}

/// Best achievable attribute accuracy on the given feature configurations
/// when the true priors are known.
pub fn bayes_rate(model: &OracleFormatModel, features: &[FilenameFeatures]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let total: f64 = features
        .iter()
        .map(|f| {
            let p = model.prior(*f);
            Attribute::ALL
                .iter()
                .map(|&a| p.marginal(a).iter().cloned().fold(0.0, f64::max))
                .sum::<f64>()
                / 3.0
        })
        .sum();
    total / features.len() as f64
}
