//! Declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::{enumerate_lead_configs, ExperimentGroup, ExperimentSpec};
use crate::error::{Error, Result};
use crate::model::UNetConfig;
use crate::training::TrainConfig;

/// Which weights are evaluated after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Last,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub base_width: usize,
    pub depth: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = UNetConfig::new(1, 1);
        Self {
            base_width: c.base_width,
            depth: c.depth,
        }
    }
}

/// ```toml
/// data_dir = "data/processed"
/// out_dir = "runs"
/// seed = 42
/// parallelism = 1
/// groups = ["singles", "pair"]   # optional
/// specs = ["I+II+V2+V4"]         # optional; union with groups
/// selection = "last"             # or "best"
///
/// [train]
/// epochs = 100
///
/// [model]
/// base_width = 64
/// depth = 4
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub parallelism: usize,
    pub groups: Vec<String>,
    pub specs: Vec<String>,
    pub selection: Selection,
    pub force: bool,
    pub train: TrainConfig,
    pub model: ModelSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/processed"),
            out_dir: PathBuf::from("runs"),
            seed: 42,
            parallelism: 1,
            groups: Vec::new(),
            specs: Vec::new(),
            selection: Selection::Last,
            force: false,
            train: TrainConfig::default(),
            model: ModelSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, rejecting every unknown key in one error.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut unknown = Vec::new();
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Config(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be positive".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        self.model_config(1, 1).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.selected_specs().map(|_| ())
    }

    pub fn model_config(&self, ch_in: usize, ch_out: usize) -> UNetConfig {
        UNetConfig::new(ch_in, ch_out).with_width(self.model.base_width, self.model.depth)
    }

    /// Specs named by `groups` and `specs`, in registry order with custom
    /// specs appended; all 25 when both are empty.
    pub fn selected_specs(&self) -> Result<Vec<ExperimentSpec>> {
        let registry = enumerate_lead_configs();
        if self.groups.is_empty() && self.specs.is_empty() {
            return Ok(registry.specs().to_vec());
        }
        let groups = self
            .groups
            .iter()
            .map(|g| g.parse::<ExperimentGroup>())
            .collect::<Result<Vec<_>>>()?;
        let mut named = self
            .specs
            .iter()
            .map(|s| s.parse::<ExperimentSpec>())
            .collect::<Result<Vec<_>>>()?;
        let mut out: Vec<ExperimentSpec> = registry
            .specs()
            .iter()
            .filter(|s| s.group().is_some_and(|g| groups.contains(&g)) || named.contains(s))
            .cloned()
            .collect();
        named.retain(|s| !out.contains(s));
        named.dedup();
        out.extend(named);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_selects_everything() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.selected_specs().unwrap().len(), 25);
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn groups_and_specs() {
        let c = RunConfig::from_toml("groups = [\"singles\"]\n").unwrap();
        assert_eq!(c.selected_specs().unwrap().len(), 3);
        let c = RunConfig::from_toml("specs = [\"I+II+V3\"]\n[train]\nepochs = 2\n").unwrap();
        let s = c.selected_specs().unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].experiment_id, "I+II+V3");
        assert_eq!(c.train.epochs, 2);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = RunConfig::from_toml("sed = 1\n[train]\nepoch = 3\nlr = 1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sed") && msg.contains("train.epoch") && msg.contains("train.lr"), "{msg}");
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_toml("groups = [\"nope\"]").is_err());
        assert!(RunConfig::from_toml("parallelism = 0").is_err());
        assert!(RunConfig::from_toml("[model]\ndepth = 0").is_err());
    }
}
