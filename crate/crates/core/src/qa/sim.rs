//! Simulated answerer and retriever.
//!
//! Each question gets a latent direct-answer accuracy `k_da ~ Beta(a, b)` and
//! a discount `gamma ~ U[lo, hi]`. The answerer reports a distorted
//! confidence `g(k_da)`; answers are correct with probability `k_da` without
//! retrieval and `p_ret` with it.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::calibration::{fit_isotonic, CalibrationModel, ConfidenceRecord};
use super::QaTask;
use crate::episode::CoreError;
use crate::rng::stream_rng;

/// Monotone map from true accuracy to verbalized confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distortion {
    Identity,
    /// g(k) = k^exponent
    Power {
        exponent: f64,
    },
}

impl Distortion {
    pub fn apply(&self, k: f64) -> f64 {
        match *self {
            Distortion::Identity => k,
            Distortion::Power { exponent } => k.powf(exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaSimConfig {
    pub k_alpha: f64,
    pub k_beta: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub p_ret: f64,
    pub distortion: Distortion,
}

impl Default for QaSimConfig {
    fn default() -> Self {
        QaSimConfig {
            k_alpha: 1.0,
            k_beta: 1.0,
            gamma_lo: 0.1,
            gamma_hi: 0.65,
            p_ret: 0.578,
            distortion: Distortion::Power { exponent: 2.0 },
        }
    }
}

impl QaSimConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = self.k_alpha > 0.0
            && self.k_beta > 0.0
            && (0.0..=1.0).contains(&self.gamma_lo)
            && (0.0..=1.0).contains(&self.gamma_hi)
            && self.gamma_lo <= self.gamma_hi
            && (0.0..=1.0).contains(&self.p_ret);
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument(format!(
                "invalid QA simulator config: {self:?}"
            )))
        }
    }

    fn k_mean(&self) -> f64 {
        self.k_alpha / (self.k_alpha + self.k_beta)
    }

    fn gamma_mean(&self) -> f64 {
        0.5 * (self.gamma_lo + self.gamma_hi)
    }

    /// P(k_da <= x)
    pub fn k_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            beta_reg(self.k_alpha, self.k_beta, x)
        }
    }

    /// E[k_da; k_da > x]
    fn k_upper_moment(&self, x: f64) -> f64 {
        let tail = if x <= 0.0 {
            1.0
        } else if x >= 1.0 {
            0.0
        } else {
            1.0 - beta_reg(self.k_alpha + 1.0, self.k_beta, x)
        };
        self.k_mean() * tail
    }
}

/// One simulated question with its outcome draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimQuestion {
    pub task: QaTask,
    pub k_da: f64,
    pub verbalized: f64,
    pub correct_direct: bool,
    pub correct_retrieve: bool,
}

pub fn sample_population(
    cfg: &QaSimConfig,
    n: usize,
    seed: u64,
    prefix: &str,
) -> Result<Vec<SimQuestion>, CoreError> {
    cfg.validate()?;
    let beta = Beta::new(cfg.k_alpha, cfg.k_beta)
        .map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
    (0..n)
        .map(|i| {
            let task_id = format!("{prefix}-{i:05}");
            let mut rng = stream_rng(seed, &task_id);
            let k_da: f64 = beta.sample(&mut rng);
            let gamma = if cfg.gamma_hi > cfg.gamma_lo {
                rng.random_range(cfg.gamma_lo..cfg.gamma_hi)
            } else {
                cfg.gamma_lo
            };
            let verbalized = cfg.distortion.apply(k_da).clamp(0.0, 1.0);
            let task = QaTask {
                task_id: task_id.clone(),
                question: format!("Simulated question {i}"),
                gold_answer: format!("answer-{i}"),
                gamma,
                p_ret: cfg.p_ret,
                k_da: Some(k_da),
                verbalized: Some(verbalized),
                k_hat: None,
                context: None,
                seed,
            };
            let (u_direct, u_retrieve) = task.outcome_draws();
            Ok(SimQuestion {
                task,
                k_da,
                verbalized,
                correct_direct: u_direct < k_da,
                correct_retrieve: u_retrieve < cfg.p_ret,
            })
        })
        .collect()
}

pub fn confidence_records(
    pop: &[SimQuestion],
    model: Option<&CalibrationModel>,
) -> Vec<ConfidenceRecord> {
    pop.iter()
        .map(|q| ConfidenceRecord {
            task_id: q.task.task_id.clone(),
            verbalized: q.verbalized,
            calibrated: model.map_or(q.verbalized, |m| m.apply(q.verbalized)),
            correct_direct: Some(u8::from(q.correct_direct)),
        })
        .collect()
}

/// Fits the calibration map on a labeled validation population.
pub fn fit_calibration(val: &[SimQuestion]) -> Result<CalibrationModel, CoreError> {
    let pairs: Vec<(f64, f64)> = val
        .iter()
        .map(|q| (q.verbalized, f64::from(u8::from(q.correct_direct))))
        .collect();
    fit_isotonic(&pairs)
}

/// Retriever quality as the empirical accuracy with retrieval.
pub fn estimate_p_ret(val: &[SimQuestion]) -> Result<f64, CoreError> {
    if val.is_empty() {
        return Err(CoreError::InvalidArgument("empty validation set".into()));
    }
    Ok(val.iter().filter(|q| q.correct_retrieve).count() as f64 / val.len() as f64)
}

/// Number of midpoint nodes used to integrate over gamma.
const GAMMA_NODES: usize = 4096;

fn integrate_gamma(cfg: &QaSimConfig, f: impl Fn(f64) -> f64) -> f64 {
    if cfg.gamma_hi <= cfg.gamma_lo {
        return f(cfg.gamma_lo);
    }
    let h = (cfg.gamma_hi - cfg.gamma_lo) / GAMMA_NODES as f64;
    (0..GAMMA_NODES)
        .map(|i| f(cfg.gamma_lo + (i as f64 + 0.5) * h))
        .sum::<f64>()
        / GAMMA_NODES as f64
}

/// Exact expected rewards of reference policies under the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRewards {
    pub never_retrieve: f64,
    pub always_retrieve: f64,
    pub oracle_threshold: f64,
}

pub fn expected_rewards(cfg: &QaSimConfig) -> Result<ExpectedRewards, CoreError> {
    cfg.validate()?;
    // E[max(k, c)] = c P(k <= c) + E[k; k > c] with c = gamma * p_ret.
    let oracle = integrate_gamma(cfg, |g| {
        let c = g * cfg.p_ret;
        c * cfg.k_cdf(c) + cfg.k_upper_moment(c)
    });
    Ok(ExpectedRewards {
        never_retrieve: cfg.k_mean(),
        always_retrieve: cfg.p_ret * cfg.gamma_mean(),
        oracle_threshold: oracle,
    })
}

/// Expected reward of "retrieve iff k_da <= t", ignoring gamma.
pub fn expected_reward_k_threshold(cfg: &QaSimConfig, t: f64) -> f64 {
    cfg.k_cdf(t) * cfg.p_ret * cfg.gamma_mean() + cfg.k_upper_moment(t)
}
