//! JSON experiment configuration.
//!
//! Every section has defaults, so `{}` is a valid config. Unknown keys are
//! rejected everywhere. Two environment variables override the file:
//! `ADARANK_OUT_DIR` (output directory) and `ADARANK_THREADS` (worker
//! count).

use std::path::{Path, PathBuf};

use adarank_core::adarl::{AdaRlConfig, EnvSetup, SacConfig};
use adarank_core::envs::{EnvKind, EnvParams};
use adarank_core::linear_soft_rl::PerturbationSpec;
use adarank_core::uncertainty::ParamSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const OUT_DIR_ENV: &str = "ADARANK_OUT_DIR";
pub const THREADS_ENV: &str = "ADARANK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BiasVariance,
    TrainAdarl,
    TrainSac,
    Compare,
    RankTrace,
    Eval,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BiasVariance => "bias-variance",
            ExperimentKind::TrainAdarl => "train-adarl",
            ExperimentKind::TrainSac => "train-sac",
            ExperimentKind::Compare => "compare",
            ExperimentKind::RankTrace => "rank-trace",
            ExperimentKind::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasVarianceConfig {
    pub dim: usize,
    pub true_rank: usize,
    /// Picard exponent.
    pub p: f64,
    /// Ratio between consecutive nonzero singular values.
    pub decay: f64,
    pub epsilons: Vec<f64>,
    pub min_rank: usize,
    /// Defaults to `dim` when absent.
    pub max_rank: Option<usize>,
    pub perturbation: PerturbationSpec,
}

impl Default for BiasVarianceConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            true_rank: 6,
            p: 2.0,
            decay: 0.5,
            epsilons: vec![0.0, 0.05, 0.1, 0.2],
            min_rank: 1,
            max_rank: None,
            perturbation: PerturbationSpec::default(),
        }
    }
}

/// A schedule preset name or an explicit parameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleChoice {
    Preset(String),
    Explicit(ParamSchedule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Full parameter set; the kind's defaults when absent.
    pub params: Option<EnvParams>,
    pub schedule: ScheduleChoice,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Pendulum,
            params: None,
            schedule: ScheduleChoice::Preset("pendulum".into()),
        }
    }
}

impl EnvConfig {
    pub fn setup(&self) -> Result<EnvSetup> {
        let schedule = match &self.schedule {
            ScheduleChoice::Preset(name) => ParamSchedule::by_name(name)?,
            ScheduleChoice::Explicit(s) => s.clone(),
        };
        let setup = EnvSetup {
            kind: self.kind,
            params: self.params.unwrap_or(self.kind.default_params()),
            schedule,
        };
        setup.validate()?;
        Ok(setup)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// When present, must agree with the CLI subcommand.
    pub experiment: Option<ExperimentKind>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Worker threads for seed fan-out; defaults to 1.
    pub threads: Option<usize>,
    pub bias_variance: BiasVarianceConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub adarl: AdaRlConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            threads: None,
            bias_variance: BiasVarianceConfig::default(),
            env: EnvConfig::default(),
            sac: SacConfig::default(),
            adarl: AdaRlConfig::default(),
        }
    }
}

/// Parsed config plus the hash of the exact input bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl ExperimentConfig {
    /// Parse JSON text. Syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            HarnessError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        config.apply_env_overrides()?;
        Ok(LoadedConfig {
            config,
            hash: sha256_hex(&bytes),
        })
    }

    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        if let Ok(t) = std::env::var(THREADS_ENV) {
            let n: usize = t
                .parse()
                .map_err(|_| HarnessError::Config(format!("{THREADS_ENV}='{t}' is not a count")))?;
            self.threads = Some(n);
        }
        Ok(())
    }

    /// Schema checks that go beyond parsing; run before any computation.
    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(HarnessError::Config(format!(
                    "config is for '{}' but the command runs '{}'",
                    k.name(),
                    kind.name()
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::Config("threads must be at least 1".into()));
        }
        match kind {
            ExperimentKind::BiasVariance => {
                let bv = &self.bias_variance;
                if bv.epsilons.is_empty()
                    || bv.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0))
                {
                    return Err(HarnessError::Config(
                        "epsilons must be a non-empty list of values >= 0".into(),
                    ));
                }
                let max = bv.max_rank.unwrap_or(bv.dim);
                if bv.min_rank == 0 || bv.min_rank > max || max > bv.dim {
                    return Err(HarnessError::Config(
                        "rank range must satisfy 1 <= min_rank <= max_rank <= dim".into(),
                    ));
                }
            }
            ExperimentKind::Eval => {}
            _ => {
                self.sac.validate()?;
                self.adarl.validate()?;
                self.env.setup()?;
            }
        }
        Ok(())
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_uses_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate(ExperimentKind::Compare).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err =
            ExperimentConfig::from_json("{\n  \"sac\": {\n    \"gama\": 0.9\n  }\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("gama"), "{msg}");
    }

    #[test]
    fn empty_seed_list_is_a_config_error() {
        let c = ExperimentConfig::from_json("{\"seeds\": []}").unwrap();
        assert!(matches!(
            c.validate(ExperimentKind::BiasVariance),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn experiment_kind_must_match_command() {
        let c = ExperimentConfig::from_json("{\"experiment\": \"rank-trace\"}").unwrap();
        assert!(c.validate(ExperimentKind::RankTrace).is_ok());
        assert!(c.validate(ExperimentKind::BiasVariance).is_err());
    }

    #[test]
    fn schedules_by_name_or_explicit() {
        let c = ExperimentConfig::from_json(
            r#"{"env": {"kind": "point_mass", "schedule": {"wind": {"base": 1.0, "amplitude": 0.0, "frequency": 0.5}}}}"#,
        )
        .unwrap();
        assert_eq!(
            c.env.setup().unwrap().schedule.value("wind", 7).unwrap(),
            1.0
        );
        let c = ExperimentConfig::from_json(r#"{"env": {"schedule": "nope"}}"#).unwrap();
        assert!(c.validate(ExperimentKind::TrainSac).is_err());
    }

    #[test]
    fn invalid_module_configs_are_config_errors() {
        for bad in [
            r#"{"sac": {"gamma": 1.0}}"#,
            r#"{"adarl": {"beta": 1.5}}"#,
            r#"{"adarl": {"d_t": 0}}"#,
        ] {
            let c = ExperimentConfig::from_json(bad).unwrap();
            assert!(
                matches!(
                    c.validate(ExperimentKind::TrainAdarl),
                    Err(HarnessError::Config(_))
                ),
                "{bad}"
            );
        }
        let c = ExperimentConfig::from_json(r#"{"bias_variance": {"max_rank": 40}}"#).unwrap();
        assert!(c.validate(ExperimentKind::BiasVariance).is_err());
    }

    #[test]
    fn hash_is_sha256_of_bytes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
