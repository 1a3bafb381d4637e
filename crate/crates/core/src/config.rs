//! TOML run configuration shared by every command.
//!
//! ```toml
//! seed = 7
//!
//! [synth]
//! test_videos = 6
//!
//! [train]
//! mode = "ddl"
//! epochs = 10
//!
//! [model]
//! base_channels = 8
//!
//! [loss]
//! lambda = 1.0
//!
//! [scoring]
//! median = 17
//! ```
//!
//! Every table and key is optional; unknown keys are rejected. The top-level
//! `seed` fills `train.seed` and `model.seed` when those are absent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::scoring::ScoringConfig;
use crate::synth::SynthConfig;
use crate::training::{Mode, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Option<Mode>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub ell_learning_rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub train: TrainSection,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub scoring: ScoringConfig,
    #[serde(skip)]
    model_seed_given: bool,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.model_seed_given = raw
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("seed"));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks value ranges, reporting failures as configuration errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |r: Result<()>| {
            r.map_err(|e| match e {
                Error::Contract(m) => Error::Config(m),
                other => other,
            })
        };
        as_config(self.synth.validate())?;
        as_config(self.model.validate())?;
        as_config(self.loss.validate())?;
        as_config(self.scoring.validate())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Fully resolved training configuration.
    pub fn train_config(&self, data: PathBuf, out: PathBuf) -> TrainConfig {
        let d = TrainConfig::default();
        let t = &self.train;
        let mut model = self.model.clone();
        if !self.model_seed_given {
            model.seed = self.seed();
        }
        TrainConfig {
            mode: t.mode.unwrap_or(d.mode),
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            ell_learning_rate: t.ell_learning_rate,
            seed: t.seed.unwrap_or(self.seed()),
            loss: self.loss.clone(),
            model,
            data,
            out,
        }
    }
}
