//! Pipeline configuration, read from a TOML file.
//!
//! ```toml
//! seed = 42
//!
//! [paths]
//! stays = "data/stays.csv"
//! events = "data/events.csv"
//! out_dir = "out"
//!
//! [rules]
//! map_threshold = 65.0
//!
//! [split]
//! test_fraction = 0.2
//! k = 5
//!
//! [model]
//! family = "gbt"
//! use_grid = false
//!
//! [model.gbt]
//! n_estimators = 50
//!
//! [grid]
//! gbt_max_depth = [4, 8]
//!
//! [importance]
//! repeats = 5
//!
//! [synth]
//! n_stays = 5000
//! signal_strength = 2.0
//! ```
//!
//! Every section and key is optional. Command-line flags take precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::importance::DEFAULT_REPEATS;
use crate::labeler::CetRuleConfig;
use crate::learners::{Family, ForestParams, GbtParams, HyperGrid, LogregParams, MlpParams, Params};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub stays: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub k: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Option<Family>,
    pub use_grid: bool,
    pub logreg: LogregParams,
    pub forest: ForestParams,
    pub gbt: GbtParams,
    pub mlp: MlpParams,
}

impl ModelConfig {
    pub fn params_for(&self, family: Family) -> Params {
        match family {
            Family::Logreg => Params::Logreg(self.logreg.clone()),
            Family::Forest => Params::Forest(self.forest.clone()),
            Family::Gbt => Params::Gbt(self.gbt.clone()),
            Family::Mlp => Params::Mlp(self.mlp.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    pub repeats: usize,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            repeats: DEFAULT_REPEATS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub rules: CetRuleConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub grid: HyperGrid,
    pub importance: ImportanceConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: crate::seed::DEFAULT_SEED,
            paths: Paths::default(),
            rules: CetRuleConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            grid: HyperGrid::default(),
            importance: ImportanceConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CetError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CetError::MissingInput(path.display().to_string()),
            _ => CetError::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(CetError::DegenerateFraction(self.split.test_fraction));
        }
        if self.split.k < 2 {
            return Err(CetError::Config(format!(
                "k must be at least 2, got {}",
                self.split.k
            )));
        }
        if self.importance.repeats == 0 {
            return Err(CetError::Config("importance repeats must be at least 1".into()));
        }
        for p in [&self.paths.stays, &self.paths.events, &self.paths.out_dir]
            .into_iter()
            .flatten()
        {
            if p.as_os_str().is_empty() {
                return Err(CetError::Config("paths must be non-empty".into()));
            }
        }
        Ok(())
    }
}
