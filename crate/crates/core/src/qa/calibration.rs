//! Isotonic calibration of verbalized confidence and expected calibration
//! error.

use serde::{Deserialize, Serialize};

use crate::episode::CoreError;

/// Monotone step function from verbalized confidence to calibrated
/// probability. Between breakpoints the value of the left breakpoint applies;
/// outside the fitted range the nearest end value applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl CalibrationModel {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.breakpoints.is_empty() || self.breakpoints.len() != self.values.len() {
            return Err(CoreError::InvalidArgument(
                "calibration model needs matching, non-empty arrays".into(),
            ));
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::InvalidArgument(
                "breakpoints must be strictly ascending".into(),
            ));
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(CoreError::InvalidArgument(
                "calibrated values must be non-decreasing".into(),
            ));
        }
        if self
            .values
            .iter()
            .chain(&self.breakpoints)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(CoreError::InvalidArgument(
                "calibration values must lie in [0,1]".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, confidence: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= confidence);
        self.values[idx.saturating_sub(1)]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CoreError> {
        let model: CalibrationModel = serde_json::from_str(text)
            .map_err(|e| CoreError::InvalidArgument(format!("calibration model: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

/// Least-squares isotonic fit by pool-adjacent-violators.
///
/// Tied confidences are averaged into one weighted point before pooling, so
/// the result does not depend on input order.
pub fn fit_isotonic(pairs: &[(f64, f64)]) -> Result<CalibrationModel, CoreError> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidArgument(
            "isotonic fit needs at least one pair".into(),
        ));
    }
    if pairs
        .iter()
        .any(|(x, y)| !(0.0..=1.0).contains(x) || !(0.0..=1.0).contains(y))
    {
        return Err(CoreError::InvalidArgument(
            "confidences and labels must lie in [0,1]".into(),
        ));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (x, mean y, weight) per distinct confidence.
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for (x, y) in sorted {
        match points.last_mut() {
            Some(last) if last.0 == x => {
                last.1 = (last.1 * last.2 + y) / (last.2 + 1.0);
                last.2 += 1.0;
            }
            _ => points.push((x, y, 1.0)),
        }
    }

    // Blocks of (mean, weight, number of points).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
    for &(_, y, w) in &points {
        blocks.push((y, w, 1));
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (m2, w2, c2) = blocks[n - 1];
            let (m1, w1, c1) = blocks[n - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(n - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }

    let values: Vec<f64> = blocks
        .iter()
        .flat_map(|&(m, _, c)| std::iter::repeat_n(m, c))
        .collect();
    Ok(CalibrationModel {
        breakpoints: points.iter().map(|p| p.0).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub task_id: String,
    pub verbalized: f64,
    pub calibrated: f64,
    /// Whether the direct answer was correct, when known.
    #[serde(default)]
    pub correct_direct: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceField {
    Verbalized,
    Calibrated,
}

/// Expected calibration error over `bins` equal-width bins. Unlabeled
/// records are ignored.
pub fn ece(
    records: &[ConfidenceRecord],
    bins: usize,
    field: ConfidenceField,
) -> Result<f64, CoreError> {
    if bins == 0 {
        return Err(CoreError::InvalidArgument("bins must be positive".into()));
    }
    let mut conf_sum = vec![0.0; bins];
    let mut acc_sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    let mut n = 0usize;
    for r in records {
        let Some(label) = r.correct_direct else {
            continue;
        };
        let c = match field {
            ConfidenceField::Verbalized => r.verbalized,
            ConfidenceField::Calibrated => r.calibrated,
        };
        let b = ((c * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        conf_sum[b] += c;
        acc_sum[b] += f64::from(label);
        count[b] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(CoreError::InvalidArgument("no labeled records".into()));
    }
    let total: f64 = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (acc_sum[b] - conf_sum[b]).abs())
        .sum();
    Ok(total / n as f64)
}
