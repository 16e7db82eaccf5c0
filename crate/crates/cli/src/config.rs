//! TOML run configuration. Every field has a default matching the baseline
//! recipe, so an empty file is a valid config; unknown keys are rejected
//! with their name in the error.

use langdiar_core::{MelConfig, ModelConfig, SynthCorpusConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mel: MelConfig,
    /// Optional explicit model section; the train command falls back to the
    /// architecture defaults for the selected model kind.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub corpus: SynthCorpusConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Load a config file (or defaults when absent) and apply the CSD_SEED
/// environment override.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, String> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            toml::from_str(&text).map_err(|e| format!("config {}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var("CSD_SEED") {
        let seed: u64 = s
            .parse()
            .map_err(|_| format!("CSD_SEED must be an unsigned integer, got {s:?}"))?;
        cfg.train.seed = seed;
        cfg.corpus.seed = seed;
    }
    Ok(cfg)
}
