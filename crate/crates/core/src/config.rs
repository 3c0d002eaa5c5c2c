//! Experiment configuration file. Every section is optional; command-line
//! flags override values read from the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchmark::BENCHMARK_NEIGHBORHOOD;
use crate::camera::DEFAULT_VIEWPOINT_SCALE;
use crate::eval::AblationConfig;
use crate::synth::{SplitMode, SynthConfig};
use crate::tgp::HyperparamSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub hyper: HyperparamSpec,
    pub viewpoint_scale: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            hyper: HyperparamSpec {
                neighborhood: Some(BENCHMARK_NEIGHBORHOOD),
                ..HyperparamSpec::default()
            },
            viewpoint_scale: DEFAULT_VIEWPOINT_SCALE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub noise_px: Vec<f64>,
    pub noise_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            noise_px: vec![0.0],
            noise_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train_ratio: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            train_ratio: 0.8,
            mode: SplitMode::BySequence,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub split: SplitSettings,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            train: TrainSettings::default(),
            eval: EvalSettings::default(),
            split: SplitSettings::default(),
            ablation: AblationConfig {
                hyper: TrainSettings::default().hyper,
                ..AblationConfig::default()
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Loads a bare hyperparameter file (the `hyper` section on its own).
pub fn load_hyper(path: impl AsRef<Path>) -> Result<HyperparamSpec, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        path: path.display().to_string(),
        source,
    })
}
