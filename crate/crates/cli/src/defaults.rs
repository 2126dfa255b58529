use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tacgraph::pretrain::TrainConfig;
use tacgraph::synth::GenerateSpec;

pub const DEFAULT_CONFIG_JSON: &str = include_str!("../../../assets/default_config.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckDefaults {
    pub seeds: u64,
    pub threshold: f64,
    pub eps: f64,
}

/// Everything a zero-flag run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub out: PathBuf,
    pub seed: u64,
    /// 0 uses every core.
    pub workers: usize,
    pub generate: GenerateSpec,
    pub train: TrainConfig,
    pub grad_check: GradCheckDefaults,
}

impl Defaults {
    #[cfg(test)]
    pub fn builtin() -> Self {
        Defaults {
            out: PathBuf::from("out"),
            seed: 0,
            workers: 0,
            generate: GenerateSpec::default(),
            train: TrainConfig::default(),
            grad_check: GradCheckDefaults {
                seeds: 20,
                threshold: 1e-4,
                eps: 1e-5,
            },
        }
    }

    pub fn shipped() -> Result<Self> {
        serde_json::from_str(DEFAULT_CONFIG_JSON).context("parsing the bundled default config")
    }
}
