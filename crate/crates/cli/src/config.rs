//! Run configuration files.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! version = 1
//! env = "code"                          # pandora | qa | code
//! policies = ["oracle", "tests_then_code_3", "code_first"]
//! dataset = "data/filereading"          # directory written by `cta gen`
//! out = "runs/code"                     # optional, `--out` wins
//! seeds = []                            # optional replicate seeds (pandora, qa)
//! max_steps = 16                        # optional
//!
//! [code]
//! rho = [0.5, 1.0, 2.0, 4.0]            # evaluate every instance at each rho
//! split = "test"                        # train | val | test
//! prior = "estimator"                   # estimator | oracle | uniform
//!
//! [qa]
//! confidence = "calibrated"             # calibrated | verbalized | true | none
//! calibration = "runs/calib/calibration.json"
//!
//! [agent]                               # used by the "llm" policy
//! endpoint = "http://localhost:8000"
//! model = "Qwen/Qwen3-8B"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use cta_agent::AgentConfig;
use cta_core::filereading::Split;
use cta_core::EnvKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// Tabular estimator fitted on the train split.
    #[default]
    Estimator,
    /// True generative priors from the dataset's weight file.
    Oracle,
    /// No prior; belief-based policies start uniform.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeOptions {
    /// Code-attempt cost grid; empty keeps each instance's own rho.
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub prior: PriorSource,
}

fn default_split() -> Split {
    Split::Test
}

impl Default for CodeOptions {
    fn default() -> Self {
        CodeOptions { rho: Vec::new(), split: Split::Test, prior: PriorSource::Estimator }
    }
}

/// Which confidence the QA policies see as `k_hat`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    /// Verbalized confidence mapped through a fitted calibration model.
    #[default]
    Calibrated,
    /// Raw verbalized confidence.
    Verbalized,
    /// The latent accuracy itself.
    True,
    /// No estimate.
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaOptions {
    #[serde(default)]
    pub confidence: ConfidenceSource,
    #[serde(default)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub env: EnvKind,
    pub policies: Vec<String>,
    pub dataset: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub code: CodeOptions,
    #[serde(default)]
    pub qa: QaOptions,
    #[serde(default)]
    pub agent: Option<AgentConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.dataset = resolve(&cfg.dataset);
        cfg.out = cfg.out.as_deref().map(resolve);
        cfg.qa.calibration = cfg.qa.calibration.as_deref().map(resolve);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization is infallible")
    }

    /// Checks everything that can be checked before any episode runs.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.policies.is_empty() {
            return Err(CliError::Config("policies must not be empty".into()));
        }
        if !self.dataset.exists() {
            return Err(CliError::Config(format!("dataset {} does not exist", self.dataset.display())));
        }
        if self.max_steps == Some(0) {
            return Err(CliError::Config("max_steps must be positive".into()));
        }
        if self.code.rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(CliError::Config("rho values must be finite and non-negative".into()));
        }
        if self.env == EnvKind::Code && !self.seeds.is_empty() {
            return Err(CliError::Config("code episodes are deterministic; seeds apply to pandora and qa".into()));
        }
        if self.env == EnvKind::Qa && self.qa.confidence == ConfidenceSource::Calibrated {
            match &self.qa.calibration {
                None => {
                    return Err(CliError::Config("confidence = \"calibrated\" needs a calibration file".into()));
                }
                Some(p) if !p.exists() => {
                    return Err(CliError::Config(format!("calibration file {} does not exist", p.display())));
                }
                Some(_) => {}
            }
        }
        if let Some(agent) = &self.agent {
            agent.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
version = 1
env = "code"
policies = ["oracle", "tests_then_code_3"]
dataset = "data"

[code]
rho = [0.5, 4.0]
prior = "oracle"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.env, EnvKind::Code);
        assert_eq!(cfg.code.rho, vec![0.5, 4.0]);
        assert_eq!(cfg.code.prior, PriorSource::Oracle);
        assert_eq!(cfg.code.split, Split::Test);
        assert_eq!(cfg.qa, QaOptions::default());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_versions_and_keys() {
        let v2 = EXAMPLE.replace("version = 1", "version = 2");
        assert!(matches!(RunConfig::from_toml(&v2), Err(CliError::Config(m)) if m.contains("version 2")));
        let typo = EXAMPLE.replace("policies", "policy");
        assert!(RunConfig::from_toml(&typo).is_err());
    }

    #[test]
    fn validation_checks_paths_and_grids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, EXAMPLE).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.dataset, dir.path().join("data"));
        assert!(cfg.validate().is_err());
        std::fs::create_dir(dir.path().join("data")).unwrap();
        cfg.validate().unwrap();

        let empty = RunConfig { policies: vec![], ..cfg.clone() };
        assert!(empty.validate().is_err());
        let seeded = RunConfig { seeds: vec![1], ..cfg.clone() };
        assert!(seeded.validate().is_err());
        let qa = RunConfig { env: EnvKind::Qa, ..cfg };
        assert!(qa.validate().is_err(), "calibrated confidence without a calibration file");
    }
}
