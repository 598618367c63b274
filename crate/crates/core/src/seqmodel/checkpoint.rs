use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::train::TrainConfig;
use super::transformer::{Layout, ParamEntry, Transformer};
use super::{ModelConfig, Precision};
use crate::error::{Error, Result};
use crate::seed::content_hash;
use crate::tokencodec::{TaskMode, TokenSequence, Vocab};

const MAGIC: &[u8; 8] = b"WMLABCKP";
const FORMAT_VERSION: u32 = 1;

/// Provenance of a trained checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub task: TaskMode,
    pub seed: u64,
    pub steps: usize,
    pub examples: usize,
    pub data_hash: String,
    pub train_config: TrainConfig,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainManifest {
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    manifest: TrainManifest,
    shapes: Vec<ParamEntry>,
    param_count: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Engine {
    Single(Transformer<f32>),
    Double(Transformer<f64>),
}

/// Dispatches a generic body over the engine's scalar type.
macro_rules! with_engine {
    ($engine:expr, $m:ident => $body:expr) => {
        match $engine {
            $crate::seqmodel::checkpoint::Engine::Single($m) => $body,
            $crate::seqmodel::checkpoint::Engine::Double($m) => $body,
        }
    };
}
pub(crate) use with_engine;

impl Engine {
    fn build(config: &ModelConfig, params: &[f64]) -> Result<Self> {
        Ok(match config.precision {
            Precision::Standard => {
                Engine::Single(Transformer::from_params(config, params.iter().map(|&p| p as f32).collect())?)
            }
            Precision::High => Engine::Double(Transformer::from_params(config, params.to_vec())?),
        })
    }
}

/// Trained model parameters plus everything needed to use them safely.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    config: ModelConfig,
    vocab_hash: String,
    manifest: TrainManifest,
    pub(crate) engine: Engine,
}

impl ModelCheckpoint {
    pub fn from_transformer<F: Real>(model: &Transformer<F>, vocab: &Vocab, manifest: TrainManifest) -> Result<Self> {
        let params: Vec<f64> = model.params().iter().map(|p| p.as_f64()).collect();
        Self::from_params(model.config(), vocab.hash(), manifest, &params)
    }

    fn from_params(config: &ModelConfig, vocab_hash: String, manifest: TrainManifest, params: &[f64]) -> Result<Self> {
        Ok(Self {
            config: config.clone(),
            vocab_hash,
            manifest,
            engine: Engine::build(config, params)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn manifest(&self) -> &TrainManifest {
        &self.manifest
    }

    pub fn task(&self) -> TaskMode {
        self.manifest.task
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn num_params(&self) -> usize {
        with_engine!(&self.engine, m => m.num_params())
    }

    pub fn params_f64(&self) -> Vec<f64> {
        with_engine!(&self.engine, m => m.params().iter().map(|p| p.as_f64()).collect())
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let h = vocab.hash();
        if h != self.vocab_hash {
            return Err(Error::VocabMismatch(self.vocab_hash.clone(), h));
        }
        Ok(())
    }

    /// Total and per-token completion log-likelihood.
    pub fn score(&self, seq: &TokenSequence) -> Result<(f64, Vec<f64>)> {
        let per = with_engine!(&self.engine, m => m.completion_log_probs(seq))?;
        Ok((per.iter().sum(), per))
    }

    /// Mean weighted completion NLL (the training objective, without gradients).
    pub fn loss(&self, batch: &[TokenSequence], weights: &[Vec<f64>]) -> Result<f64> {
        with_engine!(&self.engine, m => m.loss(batch, weights))
    }

    pub fn next_token_distributions(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        with_engine!(&self.engine, m => m.next_token_distributions(ids))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.params_f64();
        let header = Header {
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            manifest: self.manifest.clone(),
            shapes: Layout::new(&self.config).entries,
            param_count: params.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ShapeMismatch(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let layout = Layout::new(&header.config);
        if layout.entries != header.shapes || layout.total() != header.param_count {
            return Err(bad("shape table does not match the model config"));
        }
        let data = &bytes[20 + hlen..];
        if data.len() != 8 * header.param_count {
            return Err(bad(&format!(
                "expected {} parameters, found {} bytes",
                header.param_count,
                data.len()
            )));
        }
        let params: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(&header.config, header.vocab_hash, header.manifest, &params)
    }

    /// SHA-256 of the serialised checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(content_hash(&self.to_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&bytes)?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingDependency(path.display().to_string()));
        }
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and checks the vocabulary hash in one step.
    pub fn load_for(path: &Path, vocab: &Vocab) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.check_vocab(vocab)?;
        Ok(ck)
    }
}
