//! Model checkpointing on top of the tensor [`archive`](super::archive).
//!
//! The manifest metadata records the config, the original encoding, and the
//! per-layer active masks. Tensors of masked-off experts are dropped from
//! the blob; loading reconstructs them as zeros, which is invisible to the
//! forward pass because the mask gives them zero probability.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::archive::{read_archive, write_archive};
use crate::model::{ArchitectureEncoding, ModelConfig, MoEModel};

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    encoding: ArchitectureEncoding,
    active_masks: Vec<Vec<bool>>,
}

/// Serialize a model to checkpoint bytes.
pub fn save_checkpoint(model: &MoEModel) -> Vec<u8> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        encoding: model.encoding.clone(),
        active_masks: model.active_masks(),
    };
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .active_named_parameters()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec(), t.to_vec()))
        .collect();
    write_archive(&meta, &tensors)
}

/// Reconstruct a model from checkpoint bytes.
pub fn load_checkpoint(bytes: &[u8]) -> Result<MoEModel> {
    let (meta, tensors): (CheckpointMeta, _) = read_archive(bytes)?;
    let model = MoEModel::zeroed(meta.config, meta.encoding)?;

    if meta.active_masks.len() != model.blocks.len() {
        return Err(ModelError::Manifest(format!(
            "{} active masks for {} layers",
            meta.active_masks.len(),
            model.blocks.len()
        ))
        .into());
    }
    for (block, mask) in model.blocks.iter().zip(&meta.active_masks) {
        if mask.len() != block.switch.router.n_experts() {
            return Err(ModelError::Manifest(format!(
                "mask of {} entries for a layer with {} experts",
                mask.len(),
                block.switch.router.n_experts()
            ))
            .into());
        }
        if !mask.iter().any(|&a| a) {
            return Err(ModelError::NoActiveExpert { layer: block.switch.router.layer }.into());
        }
    }
    // Masks first, so the expected tensor set below excludes pruned experts.
    let mut model = model;
    for (block, mask) in model.blocks.iter_mut().zip(&meta.active_masks) {
        block.switch.router.active = mask.clone();
    }

    let mut stored: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> = tensors
        .into_iter()
        .map(|(entry, data)| (entry.name, (entry.shape, data)))
        .collect();

    for (name, tensor) in model.active_named_parameters() {
        let Some((shape, data)) = stored.remove(&name) else {
            return Err(ModelError::MissingTensor { name }.into());
        };
        if shape != tensor.shape() {
            return Err(ModelError::TensorShape { name, got: shape, expected: tensor.shape().to_vec() }.into());
        }
        tensor.set_data(&data);
    }
    if let Some(name) = stored.into_keys().next() {
        return Err(ModelError::Manifest(format!("unexpected tensor {name}")).into());
    }
    Ok(model)
}

pub fn save_checkpoint_file(model: &MoEModel, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, save_checkpoint(model)).map_err(|e| crate::error::Error::io(e, path))
}

pub fn load_checkpoint_file(path: &std::path::Path) -> Result<MoEModel> {
    let bytes = std::fs::read(path).map_err(|e| crate::error::Error::io(e, path))?;
    load_checkpoint(&bytes)
}
