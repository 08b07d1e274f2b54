//! The TOML run configuration. Every section is optional; missing keys
//! take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::GenConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::{AblationConfig, EditConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Held-out samples per transition type.
    pub heldout_per_type: usize,
    /// Base seed of the held-out split; disjoint from the training seeds.
    pub heldout_seed: u64,
    pub batch: usize,
    pub steps_a: usize,
    pub steps_b: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            heldout_per_type: 8,
            heldout_seed: 1_000_003,
            batch: 16,
            steps_a: 3000,
            steps_b: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub edit: EditConfig,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Generation settings of the held-out split: fresh seeds, no null
    /// triggers, no camera jitter.
    pub fn heldout_gen(&self) -> GenConfig {
        GenConfig {
            per_type: self.eval.heldout_per_type,
            seed: self.eval.heldout_seed,
            null_fraction: 0.0,
            jitter_fraction: 0.0,
            ..self.gen.clone()
        }
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            steps_a: self.eval.steps_a,
            steps_b: self.eval.steps_b,
            edit: self.edit.clone(),
            eval_batch: self.eval.batch,
            f64: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::parse("[train]\nalpha = 0.5\n[edit]\nsample_steps = 4\n").unwrap();
        assert_eq!(cfg.train.alpha, 0.5);
        assert_eq!(cfg.edit.sample_steps, 4);
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_values_are_config_errors() {
        assert!(matches!(
            RunConfig::parse("[train]\nalpha = \"x\""),
            Err(Error::Config(_))
        ));
    }
}
