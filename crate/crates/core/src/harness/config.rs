//! Experiment configuration: one JSON document with env, db, ppo and run
//! sections. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{PPOConfig, RunSpec};
use crate::dbmodel::DBConfig;
use crate::envsim::EnvConfig;
use crate::error::{Error, Result};

pub const SEED_ENV_VAR: &str = "IB_EXPLORE_SEED";

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub episodes: usize,
    /// Required; kept optional here only so its absence is reported by path.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Flush the metrics stream every this many records.
    #[serde(default = "one")]
    pub metrics_flush_interval: usize,
    /// Write a checkpoint every this many episodes; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: usize,
    #[serde(default = "yes")]
    pub normalize_bonus: bool,
    /// Adds wall-clock timings to metrics, which makes reruns differ.
    #[serde(default)]
    pub record_wall_clock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub db: DBConfig,
    #[serde(default)]
    pub ppo: PPOConfig,
    pub run: RunSection,
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Config {
        path: path.to_string(),
        message: e.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                path: if path.is_empty() || path == "." {
                    "<root>".into()
                } else {
                    path
                },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seed.is_none() {
            return Err(Error::Config {
                path: "run.seed".into(),
                message: "missing required field".into(),
            });
        }
        if self.run.metrics_flush_interval == 0 {
            return Err(Error::Config {
                path: "run.metrics_flush_interval".into(),
                message: "must be at least 1".into(),
            });
        }
        self.env.validate().map_err(at("env"))?;
        self.db.validate().map_err(at("db"))?;
        self.ppo.validate().map_err(at("ppo"))?;
        Ok(())
    }

    /// Config seed, superseded by `IB_EXPLORE_SEED` when that is set.
    pub fn resolve_seed(&self, env_override: Option<&str>) -> Result<u64> {
        match env_override {
            Some(raw) => raw.trim().parse().map_err(|_| Error::Config {
                path: SEED_ENV_VAR.into(),
                message: format!("`{raw}` is not an unsigned integer"),
            }),
            None => self.run.seed.ok_or_else(|| Error::Config {
                path: "run.seed".into(),
                message: "missing required field".into(),
            }),
        }
    }

    pub fn run_spec(&self, seed: u64) -> RunSpec {
        RunSpec {
            env: self.env.clone(),
            db: self.db.clone(),
            ppo: self.ppo.clone(),
            episodes: self.run.episodes,
            seed,
            normalize_bonus: self.run.normalize_bonus,
            record_wall_clock: self.run.record_wall_clock,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"env": {"kind": "grid", "grid_side": 4, "goal_cell": [3, 3]}, "run": {"episodes": 2, "seed": 3}}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.db, DBConfig::default());
        assert_eq!(cfg.ppo.actors, 8);
        assert_eq!(cfg.run.metrics_flush_interval, 1);
        assert_eq!(cfg.resolve_seed(None).unwrap(), 3);
        assert_eq!(cfg.resolve_seed(Some("11")).unwrap(), 11);
        assert!(cfg.resolve_seed(Some("x")).is_err());
        assert_eq!(cfg.run_spec(5).seed, 5);
    }

    #[test]
    fn missing_seed_names_field() {
        let err =
            ExperimentConfig::from_json(r#"{"env": {"kind": "grid"}, "run": {"episodes": 1}}"#)
                .unwrap_err();
        assert!(err.to_string().contains("run.seed"), "{err}");
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = ExperimentConfig::from_json(
            r#"{"env": {"kind": "grid"}, "db": {"learning_rat": 1e-3}, "run": {"episodes": 1, "seed": 1}}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert!(path.starts_with("db"), "{path}");
                assert!(message.contains("learning_rat"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let err = ExperimentConfig::from_json(
            r#"{"env": {"kind": "grid"}, "run": {"episodes": 1, "seed": 1, "sed": 2}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("run"), "{err}");
    }

    #[test]
    fn semantic_validation_names_section() {
        let err = ExperimentConfig::from_json(
            r#"{"env": {"kind": "grid"}, "ppo": {"actors": 0}, "run": {"episodes": 1, "seed": 1}}"#,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Config { ref path, .. } if path == "ppo"),
            "{err}"
        );
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
