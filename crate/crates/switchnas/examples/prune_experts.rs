//! Iterative expert pruning with usage tracking, thresholds, and rollback.
//!
//! Trains a deliberately over-provisioned model, then removes the least-used
//! experts one at a time until test accuracy would fall more than two points
//! below the unpruned model.
//!
//! ```bash
//! cargo run --release --example prune_experts
//! ```

use switchnas::data::{generate, DatasetSpec};
use switchnas::metrics::MetricConfig;
use switchnas::model::{ArchitectureEncoding, ModelConfig};
use switchnas::pruning::{prune_loop, PruneContext, PruneThresholds};
use switchnas::train::{train_new_model, TrainConfig};

fn main() {
    let ds = generate(&DatasetSpec { train_count: 2000, val_count: 500, test_count: 1000, seed: 13, ..Default::default() }).unwrap();
    let config = ModelConfig { n_layers: 6, ..ModelConfig::default() };
    let encoding = ArchitectureEncoding::parse("4,4,4,4,4,4").unwrap();

    println!("training over-provisioned model [{}] ...", encoding.to_compact_string());
    let (mut model, _) = train_new_model(config, encoding, &ds.train, &TrainConfig::default()).unwrap();

    let ctx = PruneContext {
        dataset: &ds,
        // Bound only accuracy here so the demo shows a full trajectory; the
        // default fairness floor would also stop the loop on a fairness dip.
        thresholds: PruneThresholds {
            max_acc_drop: 0.02,
            min_fairness: Some(f64::NEG_INFINITY),
            ..Default::default()
        },
        metric: MetricConfig::default(),
        recovery_train: TrainConfig::default(),
        seed: 0,
    };
    let log = prune_loop(&mut model, &ctx).unwrap();

    println!(
        "baseline: {} params, test acc {:.4}, fairness {:+.4}",
        log.baseline_param_count, log.baseline.test_accuracy, log.baseline.fairness_score
    );
    for e in &log.entries {
        println!(
            "iter {:2}: pruned layer {} expert {} -> {} params, test acc {:.4}, robustness {:.4}",
            e.iteration, e.layer, e.expert, e.param_count, e.report.test_accuracy, e.report.robustness
        );
    }
    println!("stop: {:?}", log.stop);
    if let Some((l, e)) = log.rolled_back {
        println!("rolled back the breaching prune of layer {l} expert {e} (checkpoint-exact)");
    }
    let final_params = model.param_count();
    println!(
        "final encoding [{}]: {} params ({:.1}% reduction)",
        model.active_encoding().to_compact_string(),
        final_params,
        100.0 * (1.0 - final_params as f64 / log.baseline_param_count as f64)
    );
}
