//! TOML run configuration shared by the CLI subcommands.
//!
//! ```toml
//! readings = "data/readings.csv"
//! output_dir = "out"
//! timezone = "UTC"          # or a whole-hour offset such as "+02:00"
//! split_ratio = 0.8
//! reset_policy = "flag"     # flag | error | clamp-zero
//! modes = ["dedicated", "common"]
//!
//! [seeds]
//! split = 1
//! mask = 2
//! model = 3
//!
//! [[models]]
//! kind = "knn"
//! k = 3
//!
//! [grid]
//! seed = 11
//! [[grid.points]]
//! kind = "knn"
//! k = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ExperimentSpec, Mode};
use crate::impute::ModelSpec;
use crate::ingest::{IngestOptions, ResetPolicy};
use crate::preprocess::DayTimezone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub split: u64,
    pub mask: u64,
    pub model: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split: 1,
            mask: 2,
            model: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default)]
    pub seed: u64,
    pub points: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub readings: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub timezone: DayTimezone,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub reset_policy: ResetPolicy,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub max_train_rows: Option<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub seeds: Seeds,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

fn default_ratio() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Dedicated, Mode::Common]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            if cfg.readings.is_relative() {
                cfg.readings = base.join(&cfg.readings);
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        if self.readings == self.output_dir || self.readings.starts_with(&self.output_dir) {
            return Err(Error::Config("readings must live outside output_dir".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentSpec {
        ExperimentSpec {
            modes: self.modes.clone(),
            models: self.models.clone(),
            timezone: self.timezone,
            split_ratio: self.split_ratio,
            split_seed: self.seeds.split,
            mask_seed: self.seeds.mask,
            model_seed: self.seeds.model,
            normalize: self.normalize,
            max_train_rows: self.max_train_rows,
            per_building_seeds: true,
        }
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            reset_policy: self.reset_policy,
            window: None,
        }
    }
}
