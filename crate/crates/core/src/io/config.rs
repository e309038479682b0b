//! JSON run configuration.
//!
//! ```json
//! {
//!   "dataset":      { "sigma": 4.0, "mean_pixel": null },
//!   "augmentation": { "scales": [0.5, ...], "oversample": { "enabled": true, "multiplicity": 3 }, "flip": false },
//!   "network":      { "preset": "toy", "width_multiplier": 0.125, ... },
//!   "training":     { "preset": "toy", "lr": 1e-5, "iterations": 3000, ... }
//! }
//! ```
//!
//! Every section and field is optional. A `preset` inside `network` or
//! `training` selects the base values that the other fields override.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::augment::AugmentConfig;
use crate::density::DEFAULT_SIGMA;
use crate::error::{Error, Result};
use crate::model::{NetworkConfig, Preset};
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "CROWDNET_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub sigma: f64,
    /// Fixed normalization mean; computed from the training patches when
    /// absent.
    pub mean_pixel: Option<f32>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sigma: DEFAULT_SIGMA,
            mean_pixel: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConfigFile {
    pub dataset: DatasetConfig,
    pub augmentation: AugmentConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
}

const SECTIONS: [&str; 4] = ["dataset", "augmentation", "network", "training"];

fn section<T: serde::de::DeserializeOwned>(name: &str, base: Value, overrides: Option<&Value>) -> Result<T> {
    let mut merged = match base {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    match overrides {
        None => {}
        Some(Value::Object(o)) => merged.extend(o.iter().map(|(k, v)| (k.clone(), v.clone()))),
        Some(_) => return Err(Error::Config(format!("`{name}` must be an object"))),
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("{name}: {e}")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain config values")
}

fn preset_of(name: &str, overrides: Option<&Value>) -> Result<Preset> {
    match overrides.and_then(|o| o.get("preset")) {
        None => Ok(Preset::default()),
        Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("{name}.preset: {e}"))),
    }
}

impl ConfigFile {
    pub fn for_preset(preset: Preset) -> Self {
        ConfigFile {
            network: NetworkConfig::for_preset(preset),
            training: TrainConfig::for_preset(preset),
            ..ConfigFile::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::Config("top level must be an object".into()))?;
        if let Some(k) = obj.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown section `{k}`")));
        }
        let net_preset = preset_of("network", obj.get("network"))?;
        let train_preset = preset_of("training", obj.get("training"))?;
        let cfg = ConfigFile {
            dataset: section("dataset", to_value(&DatasetConfig::default()), obj.get("dataset"))?,
            augmentation: section("augmentation", to_value(&AugmentConfig::default()), obj.get("augmentation"))?,
            network: section("network", to_value(&NetworkConfig::for_preset(net_preset)), obj.get("network"))?,
            training: section("training", to_value(&TrainConfig::for_preset(train_preset)), obj.get("training"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain config values")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dataset.sigma > 0.0 && self.dataset.sigma.is_finite()) {
            return Err(Error::Config(format!("dataset.sigma must be positive, got {}", self.dataset.sigma)));
        }
        self.augmentation.validate()?;
        self.network.validate()?;
        self.training.validate()
    }

    /// Replaces the training seed with `CROWDNET_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Some(seed) = seed_from_env()? {
            self.training.seed = seed;
        }
        Ok(())
    }
}

pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_paper_defaults() {
        let cfg = ConfigFile::parse("{}").unwrap();
        assert_eq!(cfg, ConfigFile::default());
        assert_eq!(cfg.training.lr, 1e-7);
        assert_eq!(cfg.dataset.sigma, 4.0);
    }

    #[test]
    fn preset_sets_the_base_for_overrides() {
        let cfg = ConfigFile::parse(r#"{"network":{"preset":"toy","pool4_kernel":3},"training":{"preset":"toy","batch_size":2}}"#)
            .unwrap();
        assert_eq!(cfg.network.width_multiplier, 0.125);
        assert_eq!(cfg.network.pool4_kernel, 3);
        assert_eq!(cfg.training.batch_size, 2);
        assert_eq!(cfg.training.iterations, 3000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse(r#"{"extra":{}}"#).is_err());
        assert!(ConfigFile::parse(r#"{"network":{"widths":[1]}}"#).is_err());
        assert!(ConfigFile::parse(r#"{"augmentation":{"oversample":{"factor":2}}}"#).is_err());
        assert!(ConfigFile::parse(r#"{"training":{"momentum":1.5}}"#).is_err());
    }

    #[test]
    fn serialized_config_parses_back() {
        let cfg = ConfigFile::for_preset(Preset::Toy);
        assert_eq!(ConfigFile::parse(&cfg.to_json()).unwrap(), cfg);
    }
}
