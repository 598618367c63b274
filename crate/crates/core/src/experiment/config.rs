use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::gridworld::WorldConfig;
use crate::pipeline::PipelineConfig;
use crate::probes::NegativeKind;
use crate::seed::content_hash;
use crate::seqmodel::{ModelConfig, TrainConfig};
use crate::tokencodec::Vocab;

/// Environment variable that overrides `out_dir`.
pub const OUT_ENV: &str = "WMLAB_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Supervised triplets (the dynamics model trains on all of them).
    pub supervised: usize,
    /// How many of those the world models see; `None` means all.
    pub world_supervised: Option<usize>,
    pub test: usize,
    pub episodes: usize,
    pub episode_length: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            supervised: 2000,
            world_supervised: None,
            test: 500,
            episodes: 500,
            episode_length: 121,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldRoleConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Times each supervised triplet appears next to the synthetic ones;
    /// 1 mixes the two sources in proportion to their sizes.
    pub supervised_repeat: usize,
}

impl Default for WorldRoleConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            supervised_repeat: 1,
        }
    }
}

impl WorldRoleConfig {
    pub fn role(&self) -> RoleConfig {
        RoleConfig {
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Test triplets probed.
    pub count: usize,
    pub kinds: Vec<NegativeKind>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            count: 200,
            kinds: NegativeKind::ALL.to_vec(),
        }
    }
}

/// Everything one end-to-end run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub pipeline: PipelineConfig,
    /// Dynamics model.
    pub cdm: RoleConfig,
    /// World model trained on supervised data only.
    pub cft: WorldRoleConfig,
    /// World model trained on supervised plus synthetic data.
    pub cwm: WorldRoleConfig,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            out_dir: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            data: DataConfig::default(),
            pipeline: PipelineConfig::default(),
            cdm: RoleConfig::default(),
            cft: WorldRoleConfig::default(),
            cwm: WorldRoleConfig {
                train: TrainConfig {
                    loss_mode: crate::seqmodel::LossMode::RecognitionWeighted,
                    ..TrainConfig::default()
                },
                ..WorldRoleConfig::default()
            },
            probe: ProbeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    /// Parses `text` after applying `key.path=value` overrides. Values are
    /// read as TOML literals, falling back to plain strings.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::ConfigInvalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(content_hash(&serde_json::to_vec(self)?))
    }

    /// `out_dir`, unless the environment overrides it.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }

    /// Number of supervised triplets the world models train on.
    pub fn world_supervised(&self) -> usize {
        self.data.world_supervised.unwrap_or(self.data.supervised).min(self.data.supervised)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        self.world.validate()?;
        self.pipeline.keyframes.validate()?;
        self.pipeline.annotate.sample.validate()?;
        self.eval.validate()?;
        if self.data.supervised == 0 || self.data.test < 2 {
            return bad("need supervised > 0 and test >= 2".into());
        }
        if self.data.episode_length < 2 {
            return bad("episode_length must be at least 2".into());
        }
        if self.world_supervised() == 0 {
            return bad("world models need at least one supervised triplet".into());
        }
        if self.cwm.supervised_repeat == 0 || self.cft.supervised_repeat == 0 {
            return bad("supervised_repeat must be at least 1".into());
        }
        if self.probe.count > self.data.test || self.probe.count < 2 {
            return bad("probe.count must lie in [2, data.test]".into());
        }
        let vocab = Vocab::standard().len();
        for (name, m) in [("cdm", &self.cdm.model), ("cft", &self.cft.model), ("cwm", &self.cwm.model)] {
            m.validate_for_board(self.world.cells())
                .map_err(|e| Error::ConfigInvalid(format!("{name}.model: {e}")))?;
            if m.vocab_size != vocab {
                return bad(format!("{name}.model.vocab_size must be {vocab}"));
            }
        }
        Ok(())
    }
}

fn apply_override(root: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::ConfigInvalid(format!("override {item:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = root;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::ConfigInvalid(format!("override {item:?}: {k} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
