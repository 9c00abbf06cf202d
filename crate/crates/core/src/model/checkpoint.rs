//! JSON checkpoints: a versioned header, the lexicon and named tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{Model, ModelConfig, ModelError};
use crate::dataset::Lexicon;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct File {
    version: u32,
    config: ModelConfig,
    /// Formula length bound used for decoding.
    max_len: usize,
    lexicon: Vec<String>,
    blocks: Vec<Block>,
}

/// A model together with what is needed to run it on raw sentences.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub lexicon: Lexicon,
    pub max_len: usize,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let file = File {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            max_len: self.max_len,
            lexicon: self.lexicon.words().to_vec(),
            blocks: self
                .model
                .block_names()
                .iter()
                .zip(self.model.params())
                .map(|(n, t)| Block {
                    name: n.clone(),
                    tensor: t.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint, ModelError> {
        let file: File = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", file.version)));
        }
        let lexicon = Lexicon::from_words(file.lexicon.iter().cloned());
        if lexicon.words() != file.lexicon.as_slice() {
            return Err(ModelError::Checkpoint("lexicon is not in canonical order".into()));
        }
        let blocks = file.blocks.into_iter().map(|b| (b.name, b.tensor)).collect();
        let model = Model::from_blocks(file.config, lexicon.len(), blocks)?;
        Ok(Checkpoint {
            model,
            lexicon,
            max_len: file.max_len,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}
