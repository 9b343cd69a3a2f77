//! Run configuration: one TOML file, tables merged over a size preset.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use poster_core::composer::Orientation;
use poster_core::encoder::EncoderSource;
use poster_core::evaluation::ExperimentConfig;
use poster_core::extraction::ModelConfig;
use poster_core::section_filter::SectionFilterConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small models that train in seconds on a laptop.
    #[default]
    Desk,
    /// Full-size dimensions.
    Paper,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub filter_checkpoint: Option<PathBuf>,
    pub extract_checkpoint: Option<PathBuf>,
    pub encoder_checkpoint: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposerOptions {
    pub orientation: Option<Orientation>,
}

/// Raw file contents. Model tables stay untyped until merged over the preset
/// so that a partial table only overrides the keys it names.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    preset: Option<Preset>,
    paths: Paths,
    filter: Option<toml::Value>,
    model: Option<toml::Value>,
    composer: ComposerOptions,
    experiment: Option<toml::Value>,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub filter: SectionFilterConfig,
    pub model: ModelConfig,
    pub composer: ComposerOptions,
    pub experiment: ExperimentConfig,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<toml::Value>, table: &str) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(patch) = patch {
        merge(&mut value, serde_json::to_value(patch)?);
    }
    serde_json::from_value(value).with_context(|| format!("invalid [{table}] table"))
}

impl PipelineConfig {
    /// Reads `path` when given; seed and preset flags override the file.
    pub fn load(path: Option<&Path>, seed: Option<u64>, preset: Option<Preset>) -> anyhow::Result<Self> {
        let raw: RawConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => RawConfig::default(),
        };
        let seed = seed.or(raw.seed).unwrap_or(0);
        let (filter_base, model_base) = match preset.or(raw.preset).unwrap_or_default() {
            Preset::Desk => (SectionFilterConfig::desk(), ModelConfig::desk()),
            Preset::Paper => (SectionFilterConfig::paper(), ModelConfig::paper()),
        };
        let filter = overlay(&filter_base, raw.filter, "filter")?;
        let model: ModelConfig = overlay(&model_base, raw.model, "model")?;
        let encoder = match &raw.paths.encoder_checkpoint {
            Some(p) => EncoderSource::Checkpoint(p.clone()),
            None => EncoderSource::Seeded(seed),
        };
        let experiment_base = ExperimentConfig {
            model: model.clone(),
            encoder,
            ..ExperimentConfig::default()
        };
        let experiment = overlay(&experiment_base, raw.experiment, "experiment")?;
        Ok(Self {
            seed,
            paths: raw.paths,
            filter,
            model,
            composer: raw.composer,
            experiment,
        })
    }

    pub fn encoder_source(&self) -> EncoderSource {
        self.experiment.encoder.clone()
    }
}
