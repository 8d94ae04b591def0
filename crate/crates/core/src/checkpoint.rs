//! Model and prototype bank snapshots as JSON.
//!
//! Floats are written with round-trip precision, so a saved and reloaded
//! model produces bit-identical outputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::PrototypeBank;
use crate::error::{Error, Result};
use crate::nn::EncoderModel;

pub const FORMAT: &str = "aplt-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: EncoderModel,
    pub bank: Option<PrototypeBank>,
}

impl Checkpoint {
    pub fn new(model: EncoderModel, bank: Option<PrototypeBank>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model,
            bank,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                ck.version
            )));
        }
        if let Some(bank) = &ck.bank {
            if bank.num_classes() != ck.model.num_classes() || bank.dim() != ck.model.embed_dim() {
                return Err(Error::Checkpoint(
                    "prototype bank does not match the model shape".into(),
                ));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
