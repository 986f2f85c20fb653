//! Run configuration: one TOML file with a section per pipeline stage,
//! overridable through `TEXSWAP_<SECTION>__<KEY>` environment variables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::DatasetKind;
use crate::downstream::ClassifierConfig;
use crate::error::{Error, IoContext, Result};
use crate::trainer::TrainerConfig;

/// Prefix of environment overrides. Nested keys are joined by `__`, e.g.
/// `TEXSWAP_TRANSLATOR__NET__BASE_WIDTH=16`.
pub const ENV_PREFIX: &str = "TEXSWAP_";
/// Name of the resolved configuration echoed into output directories.
pub const ECHO_FILE: &str = "run_config.toml";

/// Dataset construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `five_six` or `digit`.
    pub dataset: DatasetKind,
    /// Training images per class; validation gets a tenth, test the same.
    pub per_class: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::FiveSix,
            per_class: 500,
            seed: 0,
        }
    }
}

/// Augmentation and experiment orchestration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed for drawing texture references when building augmented sets.
    pub augment_seed: u64,
    /// Concurrent classifier trainings.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            augment_seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub translator: TrainerConfig,
    pub classifier: ClassifierConfig,
    pub experiment: ExperimentConfig,
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("config key `{key}` is not a section")))?;
    }
    node.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parse TOML text, apply `overrides` (environment-style pairs whose
    /// names start with [`ENV_PREFIX`]) and validate.
    pub fn from_toml_with<I>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut vars: Vec<_> = overrides
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (name, raw) in vars {
            let path: Vec<String> = name[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_ascii_lowercase)
                .collect();
            if path.len() < 2 || path.iter().any(String::is_empty) {
                return Err(Error::Config(format!(
                    "override `{name}` must look like {ENV_PREFIX}<SECTION>__<KEY>"
                )));
            }
            set_path(&mut table, &path, parse_scalar(&raw))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `path` (defaults when `None`) with process environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).at(p)?,
            None => String::new(),
        };
        Self::from_toml_with(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.per_class == 0 {
            return Err(Error::Config("data.per_class must be ≥ 1".into()));
        }
        if self.experiment.jobs == 0 {
            return Err(Error::Config("experiment.jobs must be ≥ 1".into()));
        }
        self.translator.validate()?;
        self.classifier.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Write the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.to_toml()?).at(path)
    }
}
