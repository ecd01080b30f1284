//! Adam training of one model on the train split.

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{NumericsError, Result};
use crate::model::{ArchitectureEncoding, ModelConfig, MoEModel};
use crate::numerics::{backward, ops, zero_grads, OptimizerState, Tape};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Drives parameter init and the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 5, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainStats {
    pub steps: usize,
    /// Mean task+aux loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Build a freshly initialized model and train it.
pub fn train_new_model(
    config: ModelConfig,
    encoding: ArchitectureEncoding,
    train_split: &Split,
    cfg: &TrainConfig,
) -> Result<(MoEModel, TrainStats)> {
    let model = MoEModel::new(config, encoding, cfg.seed)?;
    let stats = train_model(&model, train_split, cfg)?;
    Ok((model, stats))
}

/// Train an existing model in place.
pub fn train_model(model: &MoEModel, train_split: &Split, cfg: &TrainConfig) -> Result<TrainStats> {
    let n = train_split.len();
    let image_len = model.config.image_len();
    let params = model.named_parameters();
    let mut opt = OptimizerState::new(cfg.learning_rate);
    let mut rng = Rng::derived(cfg.seed, "train-shuffle");

    let mut steps = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_images = vec![0.0; cfg.batch_size * image_len];
    let mut order: Vec<usize> = (0..n).collect();

    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let bsz = chunk.len();
            for (slot, &i) in chunk.iter().enumerate() {
                batch_images[slot * image_len..(slot + 1) * image_len]
                    .copy_from_slice(train_split.image(i, image_len));
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| train_split.labels[i] as usize).collect();

            let tape = Tape::new();
            let out = model.forward(&tape, &batch_images[..bsz * image_len], bsz)?;
            let ce = ops::cross_entropy_loss(&tape, &out.logits, &labels)?;
            let loss = if model.config.aux_loss_enabled {
                let aux = ops::scale(&tape, &out.aux_loss, model.config.aux_loss_coeff);
                ops::add(&tape, &ce, &aux)?
            } else {
                ce
            };
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(NumericsError::NonFinite {
                    context: format!("training loss at step {steps}"),
                }
                .into());
            }
            backward(&loss, &tape)?;
            opt.step(&params)?;
            zero_grads(&params);
            tape.clear();

            epoch_loss += loss_value;
            batches += 1;
            steps += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }
    Ok(TrainStats { steps, epoch_losses })
}
