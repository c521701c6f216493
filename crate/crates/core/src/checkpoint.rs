//! JSON model archives: construction config, training graph and tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BipartiteGraph, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::estimator::Strategy;
use crate::params::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "tagcausal-checkpoint/v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Archive {
    format: String,
    model: ModelConfig,
    #[serde(default)]
    strategy: Option<Strategy>,
    #[serde(default)]
    graph: Option<BipartiteGraph>,
    tensors: Vec<Tensor>,
}

pub struct Checkpoint {
    pub model: Model,
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Strategy the parameters were trained under, if recorded.
    pub strategy: Option<Strategy>,
}

pub fn checkpoint_json(model: &Model, config: &ModelConfig, store: &ParamStore, strategy: Option<Strategy>) -> Result<String> {
    if model.kind() != config.backbone {
        return Err(Error::config("backbone", "model and config disagree"));
    }
    let archive = Archive {
        format: CHECKPOINT_FORMAT.into(),
        model: config.clone(),
        strategy,
        graph: model.graph().cloned(),
        tensors: store.tensors().to_vec(),
    };
    Ok(serde_json::to_string(&archive)?)
}

pub fn save_checkpoint(path: &Path, model: &Model, config: &ModelConfig, store: &ParamStore, strategy: Option<Strategy>) -> Result<()> {
    let s = checkpoint_json(model, config, store, strategy)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let archive: Archive = serde_json::from_str(&s)?;
    if archive.format != CHECKPOINT_FORMAT {
        return Err(Error::config("format", format!("unsupported checkpoint format {:?}", archive.format)));
    }
    let mut store = ParamStore::new();
    let model = Model::new(&archive.model, archive.graph, &mut store)?;
    store.load_values(&archive.tensors)?;
    if store.tensors().iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::Invariant("checkpoint contains non-finite parameters".into()));
    }
    Ok(Checkpoint { model, config: archive.model, store, strategy: archive.strategy })
}
