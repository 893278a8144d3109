use std::path::{Path, PathBuf};

use mrl3d_core::data::SplitScheme;
use mrl3d_core::encoders::EncoderConfig;
use mrl3d_core::finetune::FinetuneConfig;
use mrl3d_core::pretrain::PretrainConfig;
use mrl3d_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Pair dataset to read.
    pub path: Option<PathBuf>,
    /// `csv-smiles` or `sdf-pairs`.
    pub format: Option<String>,
    /// Conformer cache root; `MRL_CACHE_DIR` applies when unset.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub scheme: SplitScheme,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            scheme: SplitScheme::Kfold5,
        }
    }
}

/// Everything a command may read from the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the section seeds when set.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub split: SplitConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| path.display().to_string());
            Error::config(field, e.message().trim().to_string())
        })
    }

    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.pretrain.seed = seed;
            self.finetune.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if let Some(f) = &self.data.format {
            f.parse::<mrl3d_core::data::DatasetFormat>()?;
        }
        Ok(())
    }
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        serde_json::Value::Null => out.push((prefix.to_string(), "unset".into())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// One line per config key with its default, for the given sections.
pub fn key_listing(sections: &[&str]) -> String {
    let value = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
    let mut keys = Vec::new();
    flatten("", &value, &mut keys);
    let mut out = String::from("Config keys (TOML) and defaults:\n");
    for (k, v) in keys {
        let section = k.split('.').next().unwrap_or("");
        if k == "seed" || sections.contains(&section) {
            out.push_str(&format!("  {k} = {v}\n"));
        }
    }
    out.push_str("\nEnvironment:\n  MRL_CACHE_DIR  conformer cache root when data.cache_dir is unset\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[pretrain]\nalpah = 1.0\n").unwrap_err();
        assert!(err.message().contains("alpah"));
    }

    #[test]
    fn listing_covers_every_pretrain_key() {
        let listing = key_listing(&["pretrain"]);
        for key in ["pretrain.alpha = 0.1", "pretrain.tau = 0.1", "pretrain.n_target_atoms = 5", "pretrain.lr = unset"] {
            assert!(listing.contains(key), "{key} missing from\n{listing}");
        }
    }
}
