//! TOML configuration with strict schema validation (unknown keys rejected)
//! and the documented desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub strategy: StrategyOptions,
    pub dataset: DatasetBuildConfig,
    pub plan: PlanConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 17,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            strategy: StrategyOptions::default(),
            dataset: DatasetBuildConfig::default(),
            plan: PlanConfig::default(),
        }
    }
}

/// Synthetic corpus shape: keyword inventories, variants per keyword and
/// 2-mix trial counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub duration_s: f64,
    pub pretrain_keywords: usize,
    pub pretrain_train_variants: usize,
    pub pretrain_test_variants: usize,
    pub finetune_keywords: usize,
    pub finetune_pool_variants: usize,
    pub finetune_test_variants: usize,
    pub pretrain_mixed_trials: usize,
    pub finetune_mixed_trials: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            duration_s: 1.0,
            pretrain_keywords: 8,
            pretrain_train_variants: 120,
            pretrain_test_variants: 25,
            finetune_keywords: 4,
            // Must cover max(shots) * repeats disjoint examples per keyword.
            finetune_pool_variants: 150,
            finetune_test_variants: 25,
            pretrain_mixed_trials: 500,
            finetune_mixed_trials: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_channels: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64],
            embedding_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub checkpoint_window: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 30,
            finetune_epochs: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            checkpoint_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyOptions {
    /// Fraction of un-mixed examples per mix-training epoch.
    pub mt_clean_fraction: f64,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self {
            mt_clean_fraction: 0.5,
        }
    }
}

/// Parameters for `build-dataset` (alignment ingestion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetBuildConfig {
    pub min_letters: usize,
    pub min_count: usize,
    pub frequency_cap: usize,
    pub valid_per_keyword: usize,
    pub test_per_keyword: usize,
    pub excerpt_duration_s: f64,
}

impl Default for DatasetBuildConfig {
    fn default() -> Self {
        Self {
            min_letters: crate::data::MIN_LETTERS,
            min_count: crate::data::MIN_COUNT,
            frequency_cap: crate::data::FREQUENCY_CAP,
            valid_per_keyword: 1,
            test_per_keyword: 1,
            excerpt_duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub pretrain_strategies: Vec<StrategyKind>,
    pub finetune_strategies: Vec<StrategyKind>,
    pub shots: Vec<usize>,
    pub repeats: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            pretrain_strategies: vec![StrategyKind::Clean, StrategyKind::Mixup, StrategyKind::Mt],
            finetune_strategies: vec![StrategyKind::Clean, StrategyKind::Mixup, StrategyKind::Mt],
            shots: vec![15, 30],
            repeats: 5,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Config =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.duration_s <= 0.0 {
            return Err(Error::Config("corpus.duration_s must be positive".into()));
        }
        // The feature front end needs at least one full analysis window.
        if c.duration_s < 0.025 {
            return Err(Error::Config(
                "corpus.duration_s must cover at least one 25 ms window".into(),
            ));
        }
        if c.pretrain_keywords < 2 || c.finetune_keywords < 2 {
            return Err(Error::Config(
                "each phase needs at least 2 keywords for mixing and 2-mix tests".into(),
            ));
        }
        if c.pretrain_train_variants == 0
            || c.pretrain_test_variants == 0
            || c.finetune_pool_variants == 0
            || c.finetune_test_variants == 0
        {
            return Err(Error::Config("variant counts must be positive".into()));
        }
        if self.model.conv_channels.is_empty() || self.model.embedding_dim == 0 {
            return Err(Error::Config(
                "model needs at least one conv block and a positive embedding dim".into(),
            ));
        }
        if self.training.batch_size == 0 || self.training.checkpoint_window == 0 {
            return Err(Error::Config(
                "training.batch_size and training.checkpoint_window must be positive".into(),
            ));
        }
        if !(self.training.learning_rate > 0.0) {
            return Err(Error::Config("training.learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.strategy.mt_clean_fraction) {
            return Err(Error::Config(
                "strategy.mt_clean_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.plan.pretrain_strategies.is_empty() || self.plan.finetune_strategies.is_empty() {
            return Err(Error::Config("plan strategy sets must be non-empty".into()));
        }
        if self.plan.shots.is_empty() || self.plan.shots.iter().any(|&s| s == 0) {
            return Err(Error::Config("plan.shots must be positive".into()));
        }
        if self.plan.repeats < 2 {
            return Err(Error::Config(
                "plan.repeats must be at least 2 (aggregation needs a standard deviation)".into(),
            ));
        }
        for shots in &self.plan.shots {
            if shots * self.plan.repeats > c.finetune_pool_variants {
                return Err(Error::Config(format!(
                    "{} disjoint {shots}-shot subsets need {} examples per keyword, pool has {}",
                    self.plan.repeats,
                    shots * self.plan.repeats,
                    c.finetune_pool_variants
                )));
            }
        }
        if self.dataset.min_letters == 0 || self.dataset.frequency_cap == 0 {
            return Err(Error::Config("dataset thresholds must be positive".into()));
        }
        if self.dataset.excerpt_duration_s <= 0.0 {
            return Err(Error::Config(
                "dataset.excerpt_duration_s must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let config = Config::default();
        config.validate().unwrap();
        let text = config.to_toml();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "seed = 1\nnot_a_real_key = 5\n";
        let err = toml::from_str::<Config>(text).unwrap_err();
        assert!(err.to_string().contains("not_a_real_key"), "{err}");
    }

    #[test]
    fn nested_unknown_keys_are_rejected() {
        let text = "[training]\nbogus = 1\n";
        assert!(toml::from_str::<Config>(text).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut config = Config::default();
        config.strategy.mt_clean_fraction = 1.5;
        assert!(config.validate().is_err());

        let mut config = Config::default();
        config.plan.shots = vec![40];
        config.corpus.finetune_pool_variants = 100;
        // 5 * 40 = 200 > 100 per-keyword pool.
        assert!(config.validate().is_err());
    }
}
