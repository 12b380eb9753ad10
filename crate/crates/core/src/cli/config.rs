use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ModelConfig;
use crate::scene::synth::NoiseKind;
use crate::scene::{DatasetConfig, SceneConfig};
use crate::spatial::MusicConfig;

/// Environment variable naming the default TOML config.
pub const CONFIG_ENV: &str = "WTFORMER_LAB_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Copy the mixture through unchanged.
    Identity,
    TiMvdr,
    MbMvdr,
    /// Randomly initialised network, or the weights given by `--checkpoint`.
    WtformerRandom,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::TiMvdr => "ti-mvdr",
            Method::MbMvdr => "mb-mvdr",
            Method::WtformerRandom => "wtformer-random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Synthetic noise used when `noise_dir` is unset.
    pub noise: NoiseKind,
    /// Directory of mono noise recordings, looped to the chunk length.
    pub noise_dir: Option<PathBuf>,
    /// Direct path only.
    pub anechoic: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            noise: NoiseKind::Pink,
            noise_dir: None,
            anechoic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    pub method: Method,
    pub checkpoint: Option<PathBuf>,
    /// Also write MVDR weights as `<id>_weights.bin`.
    pub dump_weights: bool,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            method: Method::MbMvdr,
            checkpoint: None,
            dump_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0 }
    }
}

/// Everything a run can be configured with. Built-in defaults, then the TOML
/// file, then command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub dataset: DatasetConfig,
    pub simulate: SimulateConfig,
    pub enhance: EnhanceConfig,
    pub music: MusicConfig,
    pub model: ModelConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Malformed {
            what: "config",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.dataset.validate()?;
        self.model.validate()?;
        if self.music.mic_spacing <= 0.0 {
            return Err(Error::InvalidConfig("music.mic_spacing must be positive".into()));
        }
        Ok(())
    }
}
