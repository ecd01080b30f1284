//! Expert routing inspection: which expert each image takes in each layer,
//! and how concentrated each layer's usage is.
//!
//! ```bash
//! cargo run --release --example routing_traces
//! ```

use switchnas::data::{generate, DatasetSpec};
use switchnas::model::{ArchitectureEncoding, ModelConfig};
use switchnas::numerics::Tape;
use switchnas::pruning::collect_usage;
use switchnas::train::{train_new_model, TrainConfig};

fn main() {
    let ds = generate(&DatasetSpec { train_count: 1500, val_count: 400, test_count: 600, seed: 11, ..Default::default() }).unwrap();
    let config = ModelConfig { n_layers: 6, ..ModelConfig::default() };
    let encoding = ArchitectureEncoding::parse("4,4,2,4,2,4").unwrap();
    let (model, _) = train_new_model(config, encoding, &ds.train, &TrainConfig::default()).unwrap();

    // Per-image traces on a few test images, with their group labels.
    let image_len = model.config.image_len();
    let out = model.forward(&Tape::inference(), &ds.test.images[..16 * image_len], 16).unwrap();
    println!("image  group  expert-per-layer");
    for (i, trace) in out.traces.iter().enumerate() {
        println!("{:5}  {:5}  {:?}", i, ds.test.groups[i], trace.experts);
    }

    // Usage concentration over the whole validation split.
    let usage = collect_usage(&model, &ds.val, 256).unwrap();
    println!("\nper-layer expert usage over {} validation tokens:", usage.total_tokens[0]);
    for (layer, counts) in usage.counts.iter().enumerate() {
        let total = usage.total_tokens[layer] as f64;
        let mut sorted = counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let top2: u64 = sorted.iter().take(2).sum();
        let shares: Vec<String> = counts.iter().map(|&c| format!("{:.2}", c as f64 / total)).collect();
        println!(
            "  layer {layer}: shares [{}]  top-2 share {:.3}",
            shares.join(", "),
            top2 as f64 / total
        );
    }
}
