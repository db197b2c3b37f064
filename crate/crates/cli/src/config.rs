use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use softlogic_core::datagen::{AttributeVocab, QaConfig, SceneConfig, SceneFeatureProvider};
use softlogic_core::train::TrainConfig;

/// Everything a run depends on. Loaded from TOML; command-line flags are
/// applied on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for data-parallel work; 0 uses every core.
    pub threads: usize,
    pub features: FeatureConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub interp: InterpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            features: FeatureConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            interp: InterpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Standard deviation of the Gaussian noise added to every feature.
    pub noise: f64,
    /// Seed of the random projection and of the per-scene noise.
    pub seed: u64,
    /// Also build per-triple features for viewpoint relations.
    pub viewpoint: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            noise: 0.05,
            seed: 7,
            viewpoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Questions kept per split, in generation order.
    pub train_examples: usize,
    pub val_examples: usize,
    pub transfer_examples: usize,
    pub max_boolean_share: f64,
    pub scene: SceneConfig,
    pub qa: QaConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 520,
            val_scenes: 110,
            train_examples: 5000,
            val_examples: 1000,
            transfer_examples: 100,
            max_boolean_share: 0.55,
            scene: SceneConfig::default(),
            qa: QaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpConfig {
    pub cache: PathBuf,
    /// Model name used for cache keys when no endpoint is configured.
    pub model: String,
    pub max_attempts: usize,
    pub parallelism: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self {
            cache: PathBuf::from("interp_cache.jsonl"),
            model: "default".into(),
            max_attempts: 3,
            parallelism: 4,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn vocab(&self) -> &AttributeVocab {
        &self.data.scene.vocab
    }

    pub fn provider(&self) -> SceneFeatureProvider {
        let p = SceneFeatureProvider::new(
            self.vocab().clone(),
            self.features.noise,
            self.features.seed,
        );
        if self.features.viewpoint {
            p.with_ternary()
        } else {
            p
        }
    }
}
