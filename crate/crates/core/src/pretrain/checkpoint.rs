use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::TrainConfig;
use super::model::MaskedAutoencoder;
use super::train::{EpochMetrics, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Position of the trainer's ChaCha stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal; may exceed the JSON integer range.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Format {
            what: "checkpoint",
            msg: format!("rng seed: {e}"),
        })?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| Error::Format {
            what: "checkpoint",
            msg: "rng seed must be 32 bytes".into(),
        })?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        let pos: u128 = self.word_pos.parse().map_err(|e| Error::Format {
            what: "checkpoint",
            msg: format!("rng word position: {e}"),
        })?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub hand_hash: String,
    pub metrics: Vec<EpochMetrics>,
    pub params: Vec<ParamRecord>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, hand_hash: &str) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: trainer.config.clone(),
            hand_hash: hand_hash.to_string(),
            metrics: trainer.history.clone(),
            params: trainer
                .model
                .store
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
            rng: RngState::capture(&trainer.rng),
        }
    }

    /// Rebuilds the model from the stored architecture and parameters.
    pub fn model(&self) -> Result<MaskedAutoencoder> {
        let mut model = MaskedAutoencoder::new(self.config.architecture(), 0)?;
        let bad = |msg: String| Error::Format {
            what: "checkpoint",
            msg,
        };
        if self.params.len() != model.store.len() {
            return Err(bad(format!(
                "{} parameters stored, architecture has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for rec in &self.params {
            let id = model
                .store
                .find(&rec.name)
                .ok_or_else(|| bad(format!("unknown parameter {}", rec.name)))?;
            let n: usize = rec.shape.iter().product();
            if rec.values.len() != n {
                return Err(bad(format!(
                    "parameter {} has {} values for shape {:?}",
                    rec.name,
                    rec.values.len(),
                    rec.shape
                )));
            }
            let param = model.store.iter_mut().nth(id.index()).expect("found");
            if param.value.shape() != rec.shape.as_slice() {
                return Err(bad(format!(
                    "parameter {} has shape {:?}, architecture expects {:?}",
                    rec.name,
                    rec.shape,
                    param.value.shape()
                )));
            }
            param.value.data_mut().copy_from_slice(&rec.values);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(Error::UnsupportedVersion {
                    what: "checkpoint",
                    found: u32::try_from(v).unwrap_or(u32::MAX),
                    expected: CHECKPOINT_VERSION,
                })
            }
            None => {
                return Err(Error::Format {
                    what: "checkpoint",
                    msg: "missing version".into(),
                })
            }
        }
        let ck: Checkpoint = serde_json::from_value(raw)?;
        ck.config.validate()?;
        ck.model()?;
        ck.rng.restore()?;
        Ok(ck)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ck.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
