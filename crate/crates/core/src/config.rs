//! TOML experiment configuration. Every section and key is optional;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::mosaic::EnsembleConfig;
use crate::nn::{MlpConfig, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub synth: SynthConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        self.train.validate()?;
        self.ensemble.validate()?;
        self.synth.validate()?;
        self.experiment.validate()
    }

    /// Canonical TOML, used as the snapshot in reports.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }
}

pub fn parse_config(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Toml(t) => Error::Config(format!("{}: {t}", path.display())),
        other => other,
    })
}
