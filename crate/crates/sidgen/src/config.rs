use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sidgen_core::catalog::SynthConfig;
use sidgen_core::dataset::DatasetConfig;
use sidgen_core::decoder::DecodeConfig;
use sidgen_core::model::{GroundConfig, ScorerConfig, TrainConfig};
use sidgen_serve::ServeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerConfig {
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            k: 16,
            m: 3,
            seed: 0,
            max_iters: 100,
        }
    }
}

/// One TOML file with a table per stage; every table and field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub quantizer: QuantizerConfig,
    pub dataset: DatasetConfig,
    pub model: ScorerConfig,
    pub ground: GroundConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub serve: ServeConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, or returns defaults when no path is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }
}
