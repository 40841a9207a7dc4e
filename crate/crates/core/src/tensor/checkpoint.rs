use super::optim::OptimizerState;
use super::params::ParamStore;
use super::{Tensor, TensorError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint parameter {name}: {source}")]
    Parameter { name: String, source: TensorError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

/// Versioned JSON envelope around an architecture description and the
/// flat parameter list it owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<A> {
    pub format_version: u32,
    pub architecture: A,
    pub parameters: Vec<NamedArray>,
    pub optimizer: Option<OptimizerState>,
    pub rng_seed: u64,
}

impl<A: Serialize + DeserializeOwned> Checkpoint<A> {
    pub fn new(architecture: A, store: &ParamStore, optimizer: Option<OptimizerState>, rng_seed: u64) -> Self {
        let parameters = store
            .entries()
            .iter()
            .map(|e| NamedArray {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                data: e.tensor.data().to_vec(),
                trainable: e.trainable,
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            architecture,
            parameters,
            optimizer,
            rng_seed,
        }
    }

    pub fn to_store(&self) -> Result<ParamStore, CheckpointError> {
        let mut store = ParamStore::new();
        for p in &self.parameters {
            let t = Tensor::new(p.shape.clone(), p.data.clone()).map_err(|source| CheckpointError::Parameter {
                name: p.name.clone(),
                source,
            })?;
            store.add(p.name.clone(), t, p.trainable);
        }
        Ok(store)
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: header.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
