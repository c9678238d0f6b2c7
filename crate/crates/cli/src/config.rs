use std::path::{Path, PathBuf};

use lgt_core::model::ModelConfig;
use lgt_core::synth::{sha256_hex, GeneratorConfig};
use lgt_core::training::{LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Held-out split for `eval --grid`; defaults to `data_dir`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: None,
            holdout_dir: None,
            checkpoint: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Scenario count written by `generate`.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model initialization and shuffle seed.
    pub seed: u64,
    /// `error`, `warn`, `info`, `debug` or `trace`.
    pub verbosity: String,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            verbosity: "info".into(),
            paths: Paths::default(),
            dataset: DatasetConfig { count: 8 },
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("config not found: {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.generator.validate()?;
        self.log_level()?;
        Ok(())
    }

    pub fn log_level(&self) -> Result<log::LevelFilter, Failure> {
        self.verbosity
            .parse()
            .map_err(|_| Failure::config(format!("unknown verbosity {:?}", self.verbosity)))
    }

    /// SHA-256 of the effective configuration as canonical JSON.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn data_dir(&self) -> Result<PathBuf, Failure> {
        self.paths
            .data_dir
            .clone()
            .ok_or_else(|| Failure::config("no data directory (set paths.data_dir or pass --data)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nwidth = 3\n").is_err());
        let cfg: RunConfig = toml::from_str("seed = 4\n[model]\nD = 16\nheads = 4\n").unwrap();
        assert_eq!((cfg.seed, cfg.model.d, cfg.model.heads), (4, 16, 4));
    }

    fn shipped(name: &str) -> RunConfig {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        RunConfig::load(Some(&path)).unwrap()
    }

    #[test]
    fn shipped_configs_match_defaults_and_presets() {
        let mut expect = RunConfig::default();
        expect.paths.data_dir = Some(PathBuf::from("data"));
        assert_eq!(shipped("default.toml"), expect);

        let overfit = shipped("overfit.toml");
        let preset = lgt_core::presets::overfit();
        assert_eq!(overfit.model, preset.model);
        assert_eq!(overfit.train, preset.train);
        assert_eq!(overfit.generator, preset.generator);
        assert_eq!((overfit.seed, overfit.dataset.count), (preset.model_seed, preset.train_scenarios));
    }

    #[test]
    fn missing_file_is_a_config_error() {
        let err = RunConfig::load(Some(Path::new("/nonexistent/lgt.toml"))).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("config not found"));
    }
}
