//! Experiment configuration: a TOML file whose every key can be overridden
//! by an environment variable `RELOCL_<SECTION>_<KEY>`.

use std::path::{Path, PathBuf};

use relocl_core::clcore::ClHyperparams;
use relocl_core::experiment::{Strategy, TrainingConfig};
use relocl_core::graphdomain::MINUTES_PER_DAY;
use relocl_core::numcore::AdamConfig;
use relocl_core::relocnet::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Prefix of environment variables that override configuration keys.
pub const ENV_PREFIX: &str = "RELOCL_";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub simulator: SimulatorSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub households: usize,
    /// Simulated days per household, training days first.
    pub days: u64,
    pub train_days: u64,
    /// Snapshot interval in minutes.
    pub interval: u64,
    pub seed: u64,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            households: 3,
            days: 25,
            train_days: 20,
            interval: 10,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub rounds: usize,
    pub hidden: usize,
    /// Move-probability decision threshold.
    pub threshold: f64,
    /// Prediction horizon in minutes.
    pub delta: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            embed_dim: m.embed_dim,
            rounds: m.rounds,
            hidden: m.hidden,
            threshold: m.threshold,
            delta: m.horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub beta: f64,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.optimizer.lr,
            lambda: t.hyper.lambda,
            beta: t.hyper.beta,
            strategy: t.strategy,
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs"),
            formats: vec![ReportFormat::Csv, ReportFormat::Json],
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (or starts from the defaults), applies the process
    /// environment overrides and validates the result.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    /// Parses `text` and applies every `RELOCL_<SECTION>_<KEY>` pair of
    /// `vars`. Unknown sections or keys are rejected.
    pub fn from_toml_with_env(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (var, raw) in overrides {
            let rest = var[ENV_PREFIX.len()..].to_ascii_lowercase();
            let (section, key) = rest.split_once('_').ok_or_else(|| {
                CliError::Config(format!("{var}: expected {ENV_PREFIX}<SECTION>_<KEY>"))
            })?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(section_table) = entry else {
                return Err(CliError::Config(format!(
                    "{var}: [{section}] is not a section"
                )));
            };
            section_table.insert(key.to_string(), parse_env_value(&raw));
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simulator;
        if s.households < 2 {
            return Err(CliError::Config(
                "simulator.households must be at least 2".into(),
            ));
        }
        if s.interval == 0 || !MINUTES_PER_DAY.is_multiple_of(s.interval) {
            return Err(CliError::Config(format!(
                "simulator.interval {} must divide {MINUTES_PER_DAY}",
                s.interval
            )));
        }
        if s.train_days == 0 || s.train_days >= s.days {
            return Err(CliError::Config(
                "simulator.train_days must lie in [1, days)".into(),
            ));
        }
        if !self.model.delta.is_multiple_of(s.interval) {
            return Err(CliError::Config(format!(
                "model.delta {} is not a multiple of simulator.interval {}",
                self.model.delta, s.interval
            )));
        }
        if self.training.seeds.is_empty() {
            return Err(CliError::Config("training.seeds must not be empty".into()));
        }
        if self.output.formats.is_empty() {
            return Err(CliError::Config("output.formats must not be empty".into()));
        }
        self.model_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.training_config(self.training.strategy, self.training.seeds[0])
            .validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.model.embed_dim,
            rounds: self.model.rounds,
            hidden: self.model.hidden,
            threshold: self.model.threshold,
            horizon: self.model.delta,
        }
    }

    pub fn training_config(&self, strategy: Strategy, seed: u64) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            delta: self.model.delta,
            threshold: self.model.threshold,
            hyper: ClHyperparams {
                lambda: t.lambda,
                beta: t.beta,
            },
            seed,
            strategy,
        }
    }
}

/// Environment values are TOML literals when they parse as one (`200`,
/// `true`, `[1, 2]`, `"x"`), bare strings otherwise.
fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_with_env("", no_env()).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.training.epochs, 50);
        assert_eq!(cfg.training.batch_size, 1);
        assert_eq!(cfg.training.lr, 0.001);
        assert_eq!(cfg.training.lambda, 200.0);
        assert_eq!(cfg.training.beta, 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[training]\nepoch = 3", "[nonsense]\na = 1", "top = 1"] {
            let err = ExperimentConfig::from_toml_with_env(text, no_env()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn environment_overrides_file_values() {
        let env = vec![
            ("RELOCL_TRAINING_LAMBDA".to_string(), "50".to_string()),
            ("RELOCL_TRAINING_STRATEGY".to_string(), "joint".to_string()),
            ("RELOCL_SIMULATOR_TRAIN_DAYS".to_string(), "10".to_string()),
            ("RELOCL_TRAINING_SEEDS".to_string(), "[7]".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg = ExperimentConfig::from_toml_with_env("[training]\nlambda = 10.0\n", env).unwrap();
        assert_eq!(cfg.training.lambda, 50.0);
        assert_eq!(cfg.training.strategy, Strategy::Joint);
        assert_eq!(cfg.simulator.train_days, 10);
        assert_eq!(cfg.training.seeds, vec![7]);
    }

    #[test]
    fn unknown_environment_keys_are_rejected() {
        let env = vec![("RELOCL_TRAINING_GAMMA".to_string(), "1".to_string())];
        assert!(ExperimentConfig::from_toml_with_env("", env).is_err());
    }

    #[test]
    fn inconsistent_values_are_config_errors() {
        for text in [
            "[model]\ndelta = 15",
            "[simulator]\ntrain_days = 25",
            "[training]\nepochs = 0",
            "[training]\nseeds = []",
        ] {
            let err = ExperimentConfig::from_toml_with_env(text, no_env()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn training_config_carries_every_knob() {
        let cfg = ExperimentConfig::default();
        let t = cfg.training_config(Strategy::Finetuned, 9);
        assert_eq!(t.seed, 9);
        assert_eq!(t.strategy, Strategy::Finetuned);
        assert_eq!(t.delta, cfg.model.delta);
        assert_eq!(t.hyper.lambda, 200.0);
    }
}
