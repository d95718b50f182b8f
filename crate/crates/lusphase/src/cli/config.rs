//! Run configuration: one TOML file covering every stage, overridable by
//! command-line flags. The merged effective configuration is embedded in
//! the `run.json` provenance record of every output directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeaturizeConfig;
use crate::net::{FusionMode, FusionSpec, ModelConfig};
use crate::{Error, Result};

/// Training-loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate (recorded so desk-scale
    /// speedups stay visible in provenance).
    pub lr_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-5,
            lr_scale: 1.0,
        }
    }
}

impl TrainSection {
    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate * self.lr_scale
    }
}

/// Cross-validation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSection {
    pub k: usize,
}

impl Default for FoldSection {
    fn default() -> Self {
        FoldSection { k: 5 }
    }
}

/// Input and output locations, so a run is fully described by its
/// configuration file; command-line flags override these.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub input_dir: Option<std::path::PathBuf>,
    pub manifest: Option<std::path::PathBuf>,
    pub output_dir: Option<std::path::PathBuf>,
}

/// The complete reproducible run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single seed all randomness derives from (fold planning, weight
    /// initialization and shuffling use fixed offsets of it).
    pub seed: u64,
    /// Upper bound on per-image worker threads; 0 uses all cores.
    pub jobs: usize,
    pub paths: PathsSection,
    pub featurize: FeaturizeConfig,
    pub model: ModelConfig,
    pub fusion: FusionSpec,
    pub train: TrainSection,
    pub folds: FoldSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            jobs: 0,
            paths: PathsSection::default(),
            featurize: FeaturizeConfig::default(),
            model: ModelConfig::default(),
            fusion: FusionSpec::new(FusionMode::Early, vec![crate::net::FeatureKind::Us]),
            train: TrainSection::default(),
            folds: FoldSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.featurize.phase.validate()?;
        self.featurize.enhance.validate()?;
        self.model.validate()?;
        self.fusion.validate()?;
        if self.model.image_side != self.featurize.network_side {
            return Err(Error::Config(format!(
                "model.image_side {} must equal featurize.network_side {}",
                self.model.image_side, self.featurize.network_side
            )));
        }
        if self.folds.k < 2 {
            return Err(Error::Config("folds.k must be at least 2".into()));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::Config(
                "train.epochs and train.batch_size must be positive".into(),
            ));
        }
        if self.train.effective_learning_rate() < 0.0 {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }

    /// Model configuration for one fold: the declared architecture with
    /// the weight seed derived from the global seed and fold index.
    pub fn model_for_fold(&self, fold: usize) -> ModelConfig {
        let mut cfg = self.model.clone();
        cfg.seed = self.seed.wrapping_add(fold as u64);
        cfg
    }

    /// Shuffle seed for one fold's training stream.
    pub fn shuffle_seed(&self, fold: usize) -> u64 {
        self.seed.wrapping_add(0x5eed).wrapping_add(fold as u64)
    }
}

/// Provenance record dropped into every output directory.
pub fn write_run_record(
    out_dir: &Path,
    command: &str,
    config: &RunConfig,
    inputs: serde_json::Value,
) -> Result<()> {
    let record = serde_json::json!({
        "command": command,
        "inputs": inputs,
        "config": config,
    });
    let path = out_dir.join("run.json");
    let text = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::Format(format!("run record encode: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_settings() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.featurize.network_side = 64;
        cfg.model.image_side = 64;
        cfg.train.lr_scale = 100.0;
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.featurize.network_side, 64);
        assert_eq!(back.train.lr_scale, 100.0);
        back.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 9\n[featurize]\nnetwork_side = 64\n[model]\nimage_side = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.featurize.network_side, 64);
        assert_eq!(cfg.train.epochs, 50);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_config_error() {
        let result: std::result::Result<RunConfig, _> = toml::from_str("bogus_key = 1\n");
        assert!(result.is_err());
    }

    #[test]
    fn mismatched_sides_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.featurize.network_side = 64;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fold_seeds_are_distinct_and_deterministic() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.model_for_fold(0).seed, cfg.model_for_fold(1).seed);
        assert_eq!(cfg.model_for_fold(3).seed, cfg.model_for_fold(3).seed);
    }
}
